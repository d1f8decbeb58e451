//! Reference solver for testing: enumerates every penalty vector and every
//! combination of disjuncts, and minimises `Σ s_j |δ_j|` over each induced
//! polyhedron without an LP solver.
//!
//! When every atom involves at most one δ the problem decouples into
//! per-coordinate intervals. Otherwise the minimum of the piecewise-linear
//! objective is attained at a vertex of the polyhedron cut by the coordinate
//! hyperplanes `δ_j = 0`, so all vertices are enumerated.

use thiserror::Error;

use super::{Assignment, Backend, LinAtom, RepairError, RepairFormula};

/// Desk-scale bounds.
pub const MAX_CLAUSES: usize = 12;
pub const MAX_DELTAS: usize = 4;
const MAX_WORK: u64 = 50_000_000;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("instance exceeds desk-scale bounds: {0}")]
    TooLarge(String),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OracleBackend;

impl Backend for OracleBackend {
    fn id(&self) -> &str {
        "oracle"
    }

    fn solve(&self, f: &RepairFormula) -> Result<Option<Assignment>, RepairError> {
        solve_oracle(f).map_err(|e| RepairError::Backend {
            backend: "oracle".into(),
            message: e.to_string(),
        })
    }
}

/// A closed constraint `coeffs · δ (<= | =) rhs`.
#[derive(Clone, Debug)]
struct Row {
    coeffs: Vec<f64>,
    eq: bool,
    rhs: f64,
}

impl Row {
    fn holds(&self, x: &[f64]) -> bool {
        let lhs: f64 = self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
        let slack = FEAS_TOL * (1.0 + self.rhs.abs());
        if self.eq {
            (lhs - self.rhs).abs() <= slack
        } else {
            lhs <= self.rhs + slack
        }
    }
}

fn rows(f: &RepairFormula, atoms: &[&LinAtom]) -> Vec<Row> {
    atoms
        .iter()
        .map(|a| {
            let (c, eq, rhs) = a.closed(f.margins);
            Row {
                coeffs: c.to_vec(),
                eq,
                rhs,
            }
        })
        .collect()
}

/// Per-coordinate interval reasoning; `None` when the rows do not decouple.
fn solve_intervals(n: usize, rows: &[Row]) -> Option<Option<Vec<f64>>> {
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for r in rows {
        let nz: Vec<usize> = (0..n).filter(|&j| r.coeffs[j] != 0.0).collect();
        match nz.as_slice() {
            [] => {
                let ok = if r.eq {
                    r.rhs.abs() <= FEAS_TOL
                } else {
                    r.rhs >= -FEAS_TOL
                };
                if !ok {
                    return Some(None);
                }
            }
            [j] => {
                let (j, a) = (*j, r.coeffs[*j]);
                let b = r.rhs / a;
                if r.eq {
                    lo[j] = lo[j].max(b);
                    hi[j] = hi[j].min(b);
                } else if a > 0.0 {
                    hi[j] = hi[j].min(b);
                } else {
                    lo[j] = lo[j].max(b);
                }
            }
            _ => return None,
        }
    }
    let mut x = vec![0.0; n];
    for j in 0..n {
        if lo[j] > hi[j] + FEAS_TOL * (1.0 + hi[j].abs()) {
            return Some(None);
        }
        x[j] = if lo[j] > 0.0 {
            lo[j]
        } else if hi[j] < 0.0 {
            hi[j]
        } else {
            0.0
        };
    }
    Some(Some(x))
}

/// Solves the square system `A x = b` by Gaussian elimination with partial
/// pivoting; `None` if (numerically) singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        let scale = a[piv].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if a[piv][col].abs() <= 1e-12 * scale.max(1e-300) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let k = a[r][col] / a[col][col];
            if k != 0.0 {
                for c in col..n {
                    a[r][c] -= k * a[col][c];
                }
                b[r] -= k * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Minimum of `Σ s_j |x_j|` over `{x : rows}` by vertex enumeration.
fn solve_vertices(n: usize, scales: &[f64], rows: &[Row]) -> Option<Vec<f64>> {
    // candidate hyperplanes: every row boundary plus every axis
    let mut planes: Vec<(Vec<f64>, f64)> = rows.iter().map(|r| (r.coeffs.clone(), r.rhs)).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e, 0.0));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    combinations(planes.len(), n, |pick| {
        let a = pick.iter().map(|&i| planes[i].0.clone()).collect();
        let b = pick.iter().map(|&i| planes[i].1).collect();
        let Some(x) = solve_square(a, b) else { return };
        if !rows.iter().all(|r| r.holds(&x)) {
            return;
        }
        let cost: f64 = scales.iter().zip(&x).map(|(s, v)| s * v.abs()).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, x));
        }
    });
    best.map(|(_, x)| x)
}

fn min_adjustment(f: &RepairFormula, atoms: &[&LinAtom]) -> Option<Vec<f64>> {
    let n = f.deltas.len();
    let rows = rows(f, atoms);
    if let Some(r) = solve_intervals(n, &rows) {
        return r;
    }
    solve_vertices(n, &f.scales, &rows)
}

fn binom(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Exhaustive minimum of `Φ` under the formula's mode. Ties are broken like
/// every other backend (see [`RepairFormula::prefer`]).
pub fn solve_oracle(f: &RepairFormula) -> Result<Option<Assignment>, OracleError> {
    let n = f.clauses.len();
    let d = f.deltas.len();
    if n > MAX_CLAUSES {
        return Err(OracleError::TooLarge(format!("{n} corrections (max {MAX_CLAUSES})")));
    }
    if d > MAX_DELTAS {
        return Err(OracleError::TooLarge(format!("{d} parameters (max {MAX_DELTAS})")));
    }
    let total_atoms: usize = f
        .clauses
        .iter()
        .map(|c| c.dnf.iter().map(Vec::len).max().unwrap_or(0))
        .sum();
    let combos: u64 = f
        .clauses
        .iter()
        .map(|c| c.dnf.len().max(1) as u64 + 1)
        .fold(1u64, |a, b| a.saturating_mul(b));
    let work = combos.saturating_mul(binom((total_atoms + d) as u64, d as u64));
    if work > MAX_WORK {
        return Err(OracleError::TooLarge(format!("estimated work {work}")));
    }

    let mut best: Option<Assignment> = None;
    // Satisfied-first lexicographic order: bit (n-1-i) clear = clause i satisfied.
    for mask in 0u64..(1u64 << n) {
        let satisfied: Vec<bool> = (0..n).map(|i| mask >> (n - 1 - i) & 1 == 0).collect();
        if !f.exclusions.iter().all(|e| e.admits(&satisfied)) {
            continue;
        }
        let penalty: f64 = (0..n).filter(|&i| !satisfied[i]).map(|i| f.clauses[i].weight).sum();
        if let Some(b) = &best {
            let lower = super::Cost {
                penalty,
                adjustment: 0.0,
            };
            if f.mode.compare(lower, f.cost(b)) == std::cmp::Ordering::Greater {
                continue;
            }
        }
        let sat: Vec<usize> = (0..n).filter(|&i| satisfied[i]).collect();
        if sat.iter().any(|&i| f.clauses[i].dnf.is_empty()) {
            continue;
        }
        // every combination of one disjunct per satisfied clause
        let mut choice = vec![0usize; sat.len()];
        loop {
            let atoms: Vec<&LinAtom> = sat
                .iter()
                .zip(&choice)
                .flat_map(|(&i, &c)| f.clauses[i].dnf[c].iter())
                .collect();
            if let Some(x) = min_adjustment(f, &atoms) {
                let cand = Assignment {
                    deltas: x,
                    satisfied: satisfied.clone(),
                };
                if best.as_ref().is_none_or(|b| f.prefer(&cand, b) == std::cmp::Ordering::Less) {
                    best = Some(cand);
                }
            }
            // next combination
            let mut k = 0;
            loop {
                if k == sat.len() {
                    break;
                }
                choice[k] += 1;
                if choice[k] < f.clauses[sat[k]].dnf.len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == sat.len() {
                break;
            }
        }
    }
    Ok(best)
}
