//! Built-in exact solver: depth-first branch and bound over penalty
//! assignments, with an LP (`min Σ s_j t_j`, `t_j >= ±δ_j`) over the atoms
//! committed so far as the bound.
//!
//! Clauses marked satisfied are handled lazily: they only get committed to a
//! disjunct once the current LP optimum violates them. Undecided clauses that
//! no disjunct can satisfy alongside the committed atoms are forced to be
//! penalized, and their weight is added to the bound.

use std::cmp::Ordering;

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use super::{Assignment, Backend, Cost, LinAtom, RepairError, RepairFormula};

const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct NativeBackend {
    /// Abort after this many search nodes.
    pub node_limit: usize,
}

impl Default for NativeBackend {
    fn default() -> Self {
        NativeBackend { node_limit: 2_000_000 }
    }
}

impl Backend for NativeBackend {
    fn id(&self) -> &str {
        "native"
    }

    fn solve(&self, f: &RepairFormula) -> Result<Option<Assignment>, RepairError> {
        let mut s = Search {
            f,
            best: None,
            nodes: 0,
            limit: self.node_limit,
            witness: vec![None; f.clauses.len()],
        };
        let n = f.deltas.len();
        let mut decided = Vec::with_capacity(f.clauses.len());
        let forced = vec![false; f.clauses.len()];
        s.node(&mut decided, &mut Vec::new(), &mut Vec::new(), vec![0.0; n], 0.0, forced)?;
        Ok(s.best.map(|(a, _)| a))
    }
}

pub(crate) fn lp_err(e: impl std::fmt::Display) -> RepairError {
    RepairError::Backend {
        backend: "native".into(),
        message: e.to_string(),
    }
}

/// Minimizes `Σ s_j |δ_j|` subject to `atoms`. `None` if infeasible.
pub(crate) fn min_adjustment(f: &RepairFormula, atoms: &[LinAtom]) -> Result<Option<Vec<f64>>, RepairError> {
    let n = f.deltas.len();
    if atoms.is_empty() {
        return Ok(Some(vec![0.0; n]));
    }
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let d: Vec<_> = (0..n).map(|_| pb.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let t: Vec<_> = f.scales.iter().map(|s| pb.add_var(*s, (0.0, f64::INFINITY))).collect();
    for j in 0..n {
        pb.add_constraint([(t[j], 1.0), (d[j], -1.0)], ComparisonOp::Ge, 0.0);
        pb.add_constraint([(t[j], 1.0), (d[j], 1.0)], ComparisonOp::Ge, 0.0);
    }
    for a in atoms {
        let (coeffs, eq, rhs) = a.closed(f.margins);
        let expr: Vec<_> = coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, c)| (d[j], *c))
            .collect();
        pb.add_constraint(expr, if eq { ComparisonOp::Eq } else { ComparisonOp::Le }, rhs);
    }
    match pb.solve() {
        Ok(out) => {
            let sol = out.into_solution().map_err(|_| lp_err("LP interrupted"))?;
            Ok(Some(d.iter().map(|v| sol.var_value(*v)).collect()))
        }
        Err(microlp::Error::Infeasible) => Ok(None),
        Err(e) => Err(lp_err(e)),
    }
}

struct Search<'f> {
    f: &'f RepairFormula,
    best: Option<(Assignment, Cost)>,
    nodes: usize,
    limit: usize,
    /// Last point found satisfying some disjunct of each clause.
    witness: Vec<Option<Vec<f64>>>,
}

impl Search<'_> {
    fn adjustment(&self, delta: &[f64]) -> f64 {
        self.f.scales.iter().zip(delta).map(|(s, d)| s * d.abs()).sum()
    }

    /// Whether a node with this bound and decided prefix can still produce
    /// something preferable to the incumbent.
    fn promising(&self, bound: Cost, decided: &[bool], forced: &[bool]) -> bool {
        let Some((best, best_cost)) = &self.best else {
            return true;
        };
        match self.f.mode.compare(bound, *best_cost) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => {
                // best case: every undecided clause satisfied
                let n = self.f.clauses.len();
                let optimistic: Vec<bool> = decided
                    .iter()
                    .copied()
                    .chain((decided.len()..n).map(|i| !forced[i]))
                    .collect();
                let count = |v: &[bool]| v.iter().filter(|s| **s).count();
                match count(&optimistic).cmp(&count(&best.satisfied)) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => optimistic.iter().map(|s| !s).lt(best.satisfied.iter().map(|s| !s)),
                }
            }
        }
    }

    fn exclusions_possible(&self, decided: &[bool]) -> bool {
        self.f.exclusions.iter().all(|e| {
            let sat_ok = e.some_satisfied.is_empty()
                || e.some_satisfied.iter().any(|&i| i >= decided.len() || decided[i]);
            let pen_ok = e.some_penalized.is_empty()
                || e.some_penalized.iter().any(|&i| i >= decided.len() || !decided[i]);
            sat_ok && pen_ok
        })
    }

    /// Marks undecided clauses (index `from` on) that cannot be satisfied
    /// together with `atoms`. Atoms only grow along a search path, so a
    /// forced clause stays forced in the whole subtree.
    fn propagate(&mut self, from: usize, atoms: &mut Vec<LinAtom>, forced: &mut [bool]) -> Result<(), RepairError> {
        let f = self.f;
        for i in from..f.clauses.len() {
            if forced[i] {
                continue;
            }
            if let Some(w) = &self.witness[i] {
                if atoms.iter().all(|a| a.holds(w, f.margins, FEAS_TOL)) {
                    continue;
                }
            }
            let mut found = None;
            for conj in &f.clauses[i].dnf {
                let mark = atoms.len();
                atoms.extend(conj.iter().cloned());
                let d = min_adjustment(f, atoms)?;
                atoms.truncate(mark);
                if d.is_some() {
                    found = d;
                    break;
                }
            }
            match found {
                Some(d) => self.witness[i] = Some(d),
                None => forced[i] = true,
            }
        }
        Ok(())
    }

    fn node(
        &mut self,
        decided: &mut Vec<bool>,
        pending: &mut Vec<usize>,
        atoms: &mut Vec<LinAtom>,
        delta: Vec<f64>,
        penalty: f64,
        mut forced: Vec<bool>,
    ) -> Result<(), RepairError> {
        self.nodes += 1;
        if self.nodes > self.limit {
            return Err(RepairError::Backend {
                backend: "native".into(),
                message: format!("search exceeded {} nodes", self.limit),
            });
        }
        let bound = Cost {
            penalty,
            adjustment: self.adjustment(&delta),
        };
        if !self.promising(bound, decided, &forced) || !self.exclusions_possible(decided) {
            return Ok(());
        }
        let f = self.f;

        // Commit the first pending clause the current optimum violates.
        if let Some(pos) = pending
            .iter()
            .position(|&i| !f.clauses[i].phi.holds(&delta, f.margins, FEAS_TOL))
        {
            let i = pending.remove(pos);
            let mut children = Vec::new();
            for conj in &f.clauses[i].dnf {
                let mark = atoms.len();
                atoms.extend(conj.iter().cloned());
                if let Some(d) = min_adjustment(f, atoms)? {
                    children.push((self.adjustment(&d), conj, d));
                }
                atoms.truncate(mark);
            }
            children.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (_, conj, d) in children {
                let mark = atoms.len();
                atoms.extend(conj.iter().cloned());
                self.node(decided, pending, atoms, d, penalty, forced.clone())?;
                atoms.truncate(mark);
            }
            pending.insert(pos, i);
            return Ok(());
        }

        let k = decided.len();
        self.propagate(k, atoms, &mut forced)?;
        let unavoidable: f64 = (k..f.clauses.len())
            .filter(|&i| forced[i])
            .map(|i| f.clauses[i].weight)
            .sum();
        if unavoidable > 0.0 {
            let bound = Cost {
                penalty: penalty + unavoidable,
                adjustment: bound.adjustment,
            };
            if !self.promising(bound, decided, &forced) {
                return Ok(());
            }
        }
        if k == f.clauses.len() {
            let a = Assignment {
                deltas: delta,
                satisfied: decided.clone(),
            };
            if f.exclusions.iter().all(|e| e.admits(&a.satisfied)) {
                let better = match &self.best {
                    None => true,
                    Some((b, _)) => f.prefer(&a, b) == Ordering::Less,
                };
                if better {
                    let c = f.cost(&a);
                    self.best = Some((a, c));
                }
            }
            return Ok(());
        }

        let clause = &f.clauses[k];
        if !forced[k] {
            decided.push(true);
            let trivially = clause.dnf.iter().any(|c| c.is_empty());
            if !trivially {
                pending.push(k);
            }
            self.node(decided, pending, atoms, delta.clone(), penalty, forced.clone())?;
            if !trivially {
                pending.pop();
            }
            decided.pop();
        }
        decided.push(false);
        self.node(decided, pending, atoms, delta, penalty + clause.weight, forced)?;
        decided.pop();
        Ok(())
    }
}
