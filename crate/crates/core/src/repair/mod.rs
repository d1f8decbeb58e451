//! MaxSMT parameter repair.
//!
//! Every correction `i` contributes a clause `w_i = H_i ⊻ (w_i = 0 ∧ φ_i)`
//! where `φ_i` constrains the additive adjustments δ. The objective is
//! `Σ w_i + Σ s_j |δ_j|`. [`srtr`] solves the formula repeatedly, each round
//! forcing a different satisfied set.

mod linear;
mod native;
mod oracle;
pub mod smtlib;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use linear::{Affine, Constraint, LinAtom, LinearError, Linearizer, Margins, Rel};
pub use native::NativeBackend;
pub use oracle::{solve_oracle, OracleBackend, OracleError};
pub use smtlib::{encode, SmtBackend};

use crate::corrections::{Correction, CorrectionKind};
use crate::lang::{eval_transition, render_expr, Expr, Label, ParameterMap, TransitionFn};
use crate::residual::{classify_params, make_residual_for, resolve_designated, Residual, ResidualError};
use crate::trace::Trace;

/// Upper bound on the number of disjuncts per clause.
pub const DNF_LIMIT: usize = 1 << 14;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Minimize `Σ w + Σ s|δ|`.
    #[default]
    WeightedSum,
    /// Minimize `Σ w`, then `Σ s|δ|`.
    Lexicographic,
    /// Both sums as separate objectives; one Pareto-optimal point is returned.
    Pareto,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "weighted-sum" => Ok(Mode::WeightedSum),
            "lexicographic" => Ok(Mode::Lexicographic),
            "pareto" => Ok(Mode::Pareto),
            _ => Err(format!("unknown mode `{s}` (weighted-sum | lexicographic | pareto)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::WeightedSum => "weighted-sum",
            Mode::Lexicographic => "lexicographic",
            Mode::Pareto => "pareto",
        })
    }
}

/// Repair settings. Deserializes from config files with the same keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairConfig {
    pub mode: Mode,
    #[serde(rename = "H")]
    pub h: f64,
    pub epsilon: f64,
    /// Robustness slack for non-strict comparisons.
    pub eta: f64,
    pub k: usize,
    pub backend: String,
    /// Restricts repair to these parameters; all repairable ones if absent.
    pub designated: Option<Vec<String>>,
    /// Weigh `|δ_j|` by `1 / |p_j|` (1 for zero-valued parameters).
    pub normalize: bool,
    /// Penalty multiplier for nominal corrections.
    pub nominal_weight: f64,
    /// Penalty multiplier for negative corrections.
    pub negative_weight: f64,
    pub seed: u64,
    /// Treat the backend as able to handle non-linear arithmetic.
    pub nonlinear: bool,
    /// Per-call backend time limit in seconds.
    pub timeout_s: f64,
    /// Record wall-clock time per solution (makes output non-reproducible).
    pub timings: bool,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            mode: Mode::WeightedSum,
            h: 1.0,
            epsilon: 1e-3,
            eta: 1e-7,
            k: 1,
            backend: "native".into(),
            designated: None,
            normalize: false,
            nominal_weight: 1.0,
            negative_weight: 1.0,
            seed: 0,
            nonlinear: false,
            timeout_s: 60.0,
            timings: false,
        }
    }
}

impl RepairConfig {
    pub fn validate(&self) -> Result<(), RepairError> {
        let bad = |m: &str| Err(RepairError::Config(m.to_string()));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad("H must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be non-negative");
        }
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if !(self.nominal_weight > 0.0 && self.negative_weight > 0.0) {
            return bad("weight multipliers must be positive");
        }
        Ok(())
    }

    pub fn margins(&self) -> Margins {
        Margins {
            epsilon: self.epsilon,
            eta: self.eta,
        }
    }

    fn weight(&self, kind: CorrectionKind) -> f64 {
        self.h
            * match kind {
                CorrectionKind::Immediate => 1.0,
                CorrectionKind::Negative => self.negative_weight,
                CorrectionKind::Nominal => self.nominal_weight,
            }
    }
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("correction {index}: {source}")]
    Residual {
        index: usize,
        #[source]
        source: ResidualError,
    },
    #[error("correction {index}: {source}")]
    Linear {
        index: usize,
        #[source]
        source: LinearError,
    },
    #[error("correction {index} refers to timestep {t}, outside the trace")]
    OutOfRange { index: usize, t: usize },
    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
}

impl RepairError {
    pub fn is_backend(&self) -> bool {
        matches!(self, RepairError::Backend { .. } | RepairError::UnknownBackend(_))
    }
}

/// `φ` for one correction.
#[derive(Clone, Debug)]
pub struct Phi {
    pub residual: Residual,
    /// Path conditions (over parameters) that make up φ, before δ
    /// substitution: satisfied when any (positive) or none (negative) holds.
    pub paths: Vec<Expr>,
    pub positive: bool,
    pub constraint: Constraint,
    /// Set when the target state is not reachable from the recorded state.
    pub diagnostic: Option<String>,
}

impl Phi {
    /// Renders φ with each symbol `x` written as `(p(x) + δ_x)`.
    pub fn render(&self, base: &ParameterMap) -> String {
        let subst = |e: &Expr| -> String {
            let mut s = render_expr(e);
            // longest first so `param.ab` is not clobbered by `param.a`
            let mut symbols: Vec<&String> = self.residual.symbols.iter().collect();
            symbols.sort_by_key(|x| std::cmp::Reverse(x.len()));
            for x in symbols {
                let v = base.get(x).unwrap_or(0.0);
                s = s.replace(
                    &format!("param.{x}"),
                    &format!("({} + d.{x})", crate::lang::fmt_real(v)),
                );
            }
            s
        };
        let parts: Vec<String> = self.paths.iter().map(|e| format!("({})", subst(e))).collect();
        match (self.positive, parts.is_empty()) {
            (true, true) => "false".into(),
            (false, true) => "true".into(),
            (true, false) => parts.join(" || "),
            (false, false) => format!("!({})", parts.join(" || ")),
        }
    }
}

/// Builds `φ` for correction `c` at `trace[c.t]` with adjustments on
/// `symbols`.
pub fn correct_one(
    t: &TransitionFn,
    trace: &Trace,
    p: &ParameterMap,
    symbols: &[String],
    c: &Correction,
) -> Result<Phi, RepairError> {
    let elem = trace
        .get(c.t)
        .ok_or(RepairError::OutOfRange { index: 0, t: c.t })?;
    let residual =
        make_residual_for(t, elem, p, symbols).map_err(|source| RepairError::Residual { index: 0, source })?;
    let lin = Linearizer { symbols, base: p };
    let positive = c.is_positive();
    let paths: Vec<Expr> = residual.paths_to(&c.state).map(|p| p.condition()).collect();
    let mut parts = Vec::new();
    for e in &paths {
        parts.push(
            lin.constraint(e, !positive)
                .map_err(|source| RepairError::Linear { index: 0, source })?,
        );
    }
    let everywhere = !residual.paths.is_empty() && paths.len() == residual.paths.len();
    let constraint = if positive && everywhere {
        // the disjunction of all paths is valid; with margins it would not be
        Constraint::True
    } else if positive {
        Constraint::or(parts)
    } else {
        Constraint::and(parts)
    };
    let diagnostic = (paths.is_empty() && positive).then(|| {
        format!(
            "state \"{}\" is unreachable from \"{}\" at t = {}",
            c.state, elem.state, c.t
        )
    });
    Ok(Phi {
        residual,
        paths,
        positive,
        constraint,
        diagnostic,
    })
}

#[derive(Clone, Debug)]
pub struct Clause {
    /// Penalty paid when the correction is left unsatisfied.
    pub weight: f64,
    pub phi: Constraint,
    pub dnf: Vec<Vec<LinAtom>>,
}

/// Solution-exploration constraint: some index in `some_satisfied` must be
/// satisfied and some index in `some_penalized` must be penalized. Empty sets
/// impose nothing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Exclusion {
    pub some_satisfied: Vec<usize>,
    pub some_penalized: Vec<usize>,
}

impl Exclusion {
    pub fn admits(&self, satisfied: &[bool]) -> bool {
        (self.some_satisfied.is_empty() || self.some_satisfied.iter().any(|&i| satisfied[i]))
            && (self.some_penalized.is_empty() || self.some_penalized.iter().any(|&i| !satisfied[i]))
    }
}

/// `Φ = ⋀ᵢ (wᵢ = Hᵢ ⊻ (wᵢ = 0 ∧ φᵢ))` plus objective data.
#[derive(Clone, Debug)]
pub struct RepairFormula {
    /// Parameter adjusted by each δ.
    pub deltas: Vec<String>,
    /// Objective weight `s_j` of `|δ_j|`.
    pub scales: Vec<f64>,
    pub clauses: Vec<Clause>,
    pub exclusions: Vec<Exclusion>,
    pub mode: Mode,
    pub margins: Margins,
}

/// Objective components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Cost {
    pub penalty: f64,
    pub adjustment: f64,
}

impl Cost {
    pub fn total(&self) -> f64 {
        self.penalty + self.adjustment
    }
}

/// Absolute tolerance for comparing objective values.
pub const COST_TOL: f64 = 1e-9;

fn cmp_tol(a: f64, b: f64) -> std::cmp::Ordering {
    use std::cmp::Ordering::*;
    if a < b - COST_TOL {
        Less
    } else if a > b + COST_TOL {
        Greater
    } else {
        Equal
    }
}

impl Mode {
    /// Compares costs under this mode's objective, with tolerance.
    pub fn compare(self, a: Cost, b: Cost) -> std::cmp::Ordering {
        match self {
            Mode::WeightedSum | Mode::Pareto => cmp_tol(a.total(), b.total()),
            Mode::Lexicographic => cmp_tol(a.penalty, b.penalty).then(cmp_tol(a.adjustment, b.adjustment)),
        }
    }
}

/// A backend's answer: δ values and which clauses are satisfied.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub deltas: Vec<f64>,
    pub satisfied: Vec<bool>,
}

impl RepairFormula {
    pub fn cost(&self, a: &Assignment) -> Cost {
        Cost {
            penalty: self
                .clauses
                .iter()
                .zip(&a.satisfied)
                .filter(|(_, s)| !**s)
                .map(|(c, _)| c.weight)
                .sum::<f64>()
                + 0.0, // an empty sum is -0
            adjustment: self.scales.iter().zip(&a.deltas).map(|(s, d)| s * d.abs()).sum::<f64>() + 0.0,
        }
    }

    /// Whether the assignment satisfies every clause it claims and every
    /// exclusion.
    pub fn admits(&self, a: &Assignment, tol: f64) -> bool {
        a.satisfied.len() == self.clauses.len()
            && self
                .clauses
                .iter()
                .zip(&a.satisfied)
                .all(|(c, s)| !*s || c.phi.holds(&a.deltas, self.margins, tol))
            && self.exclusions.iter().all(|e| e.admits(&a.satisfied))
    }

    /// Canonical preference between two admissible assignments: lower cost,
    /// then more satisfied clauses, then the lexicographically first
    /// satisfied vector (satisfied before penalized).
    pub fn prefer(&self, a: &Assignment, b: &Assignment) -> std::cmp::Ordering {
        let count = |x: &Assignment| x.satisfied.iter().filter(|s| **s).count();
        self.mode
            .compare(self.cost(a), self.cost(b))
            .then(count(b).cmp(&count(a)))
            .then_with(|| {
                a.satisfied
                    .iter()
                    .map(|s| !s)
                    .cmp(b.satisfied.iter().map(|s| !s))
            })
    }
}

/// Builds `Φ` for all corrections. The δ set is `designated` (or every
/// repairable parameter) and is shared by all clauses.
pub fn correct_all(
    t: &TransitionFn,
    p: &ParameterMap,
    trace: &Trace,
    corrections: &[Correction],
    cfg: &RepairConfig,
) -> Result<(RepairFormula, Vec<Phi>), RepairError> {
    cfg.validate()?;
    let symbols = repair_symbols(t, corrections, cfg)?;
    let mut clauses = Vec::new();
    let mut phis = Vec::new();
    for (index, c) in corrections.iter().enumerate() {
        let phi = correct_one(t, trace, p, &symbols, c).map_err(|e| match e {
            RepairError::Residual { source, .. } => RepairError::Residual { index, source },
            RepairError::Linear { source, .. } => RepairError::Linear { index, source },
            RepairError::OutOfRange { t, .. } => RepairError::OutOfRange { index, t },
            e => e,
        })?;
        let dnf = phi
            .constraint
            .dnf(DNF_LIMIT)
            .map_err(|source| RepairError::Linear { index, source })?;
        clauses.push(Clause {
            weight: cfg.weight(c.kind),
            phi: phi.constraint.clone(),
            dnf,
        });
        phis.push(phi);
    }
    let scales = symbols
        .iter()
        .map(|x| match (cfg.normalize, p.get(x)) {
            (true, Some(v)) if v != 0.0 => 1.0 / v.abs(),
            _ => 1.0,
        })
        .collect();
    Ok((
        RepairFormula {
            deltas: symbols,
            scales,
            clauses,
            exclusions: Vec::new(),
            mode: cfg.mode,
            margins: cfg.margins(),
        },
        phis,
    ))
}

/// The parameters a repair may adjust: the configured designated set, else
/// the union of per-correction sets, else every repairable parameter.
pub fn repair_symbols(
    t: &TransitionFn,
    corrections: &[Correction],
    cfg: &RepairConfig,
) -> Result<Vec<String>, RepairError> {
    let class = classify_params(t, cfg.nonlinear);
    let from_corrections: Option<Vec<String>> = {
        let sets: Vec<&Vec<String>> = corrections.iter().filter_map(|c| c.params.as_ref()).collect();
        (!sets.is_empty()).then(|| {
            sets.into_iter()
                .flatten()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
    };
    let chosen = cfg.designated.clone().or(from_corrections);
    resolve_designated(t, &class, chosen.as_deref()).map_err(|source| RepairError::Residual { index: 0, source })
}

/// A solver for repair formulas.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    /// Whether the backend accepts non-linear arithmetic.
    fn nonlinear(&self) -> bool {
        false
    }
    /// An optimal assignment, or `None` when the formula is unsatisfiable.
    fn solve(&self, f: &RepairFormula) -> Result<Option<Assignment>, RepairError>;
}

/// Looks up a backend by id: `native`, `oracle`, `z3` or `smt:<command>`.
pub fn backend(id: &str, timeout: Duration) -> Result<Box<dyn Backend>, RepairError> {
    match id {
        "native" => Ok(Box::new(NativeBackend::default())),
        "oracle" => Ok(Box::new(OracleBackend)),
        "z3" => Ok(Box::new(SmtBackend::z3(timeout))),
        s if s.starts_with("smt:") => Ok(Box::new(SmtBackend::command(&s[4..], timeout))),
        _ => Err(RepairError::UnknownBackend(id.to_string())),
    }
}

/// One repair. Serialized into solutions files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairSolution {
    pub rank: usize,
    /// δ for every declared parameter (zero outside the repair set).
    pub adjustments: BTreeMap<String, f64>,
    /// The repaired parameter map, `P + δ`.
    pub params: ParameterMap,
    /// `w_i` per correction: 0 or `H_i`.
    pub penalties: Vec<f64>,
    /// Indices of satisfied corrections.
    pub satisfied: Vec<usize>,
    pub objective: f64,
    pub penalty: f64,
    pub adjustment_cost: f64,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

/// Output of [`srtr`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Solutions {
    pub config: Option<RepairConfig>,
    pub corrections: usize,
    pub repairable: Vec<String>,
    pub solutions: Vec<RepairSolution>,
    /// Set when exploration stopped early because no further distinct
    /// solution exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Solutions {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("solutions serialize");
        s.push('\n');
        s
    }
}

fn to_solution(
    t: &TransitionFn,
    p: &ParameterMap,
    f: &RepairFormula,
    a: &Assignment,
    rank: usize,
    backend: &str,
    elapsed: Option<Duration>,
) -> RepairSolution {
    let mut adjustments: BTreeMap<String, f64> = t.params.iter().map(|x| (x.clone(), 0.0)).collect();
    let mut params = p.clone();
    for (x, d) in f.deltas.iter().zip(&a.deltas) {
        // normalise -0
        let d = if *d == 0.0 { 0.0 } else { *d };
        adjustments.insert(x.clone(), d);
        params.set(x, p.get(x).unwrap_or(0.0) + d);
    }
    let cost = f.cost(a);
    RepairSolution {
        rank,
        adjustments,
        params,
        penalties: f
            .clauses
            .iter()
            .zip(&a.satisfied)
            .map(|(c, s)| if *s { 0.0 } else { c.weight })
            .collect(),
        satisfied: a.satisfied.iter().enumerate().filter(|(_, s)| **s).map(|(i, _)| i).collect(),
        objective: cost.total(),
        penalty: cost.penalty,
        adjustment_cost: cost.adjustment,
        backend: backend.to_string(),
        wall_time_ms: elapsed.map(|e| e.as_secs_f64() * 1e3),
    }
}

/// Solves `f` with `backend` up to `k` times, each round excluding the
/// previous satisfied sets.
pub fn explore(
    f: &mut RepairFormula,
    backend: &dyn Backend,
    k: usize,
) -> Result<(Vec<(Assignment, Duration)>, Option<String>), RepairError> {
    let mut out = Vec::new();
    for round in 0..k {
        let start = Instant::now();
        let Some(a) = backend.solve(f)? else {
            let note = if round == 0 {
                "formula is unsatisfiable".to_string()
            } else {
                format!("no further distinct solution after {round}")
            };
            return Ok((out, Some(note)));
        };
        let elapsed = start.elapsed();
        let ex = Exclusion {
            some_satisfied: (0..a.satisfied.len()).filter(|&i| !a.satisfied[i]).collect(),
            some_penalized: (0..a.satisfied.len()).filter(|&i| a.satisfied[i]).collect(),
        };
        out.push((a, elapsed));
        if ex.some_satisfied.is_empty() && ex.some_penalized.is_empty() {
            // nothing left to vary
            return Ok((out, (round + 1 < k).then(|| "no corrections to vary".to_string())));
        }
        f.exclusions.push(ex);
    }
    Ok((out, None))
}

/// The full repair loop: builds `Φ` and enumerates up to `cfg.k` solutions.
pub fn srtr(
    t: &TransitionFn,
    p: &ParameterMap,
    trace: &Trace,
    corrections: &[Correction],
    cfg: &RepairConfig,
) -> Result<Solutions, RepairError> {
    let backend = backend(&cfg.backend, Duration::from_secs_f64(cfg.timeout_s))?;
    srtr_with(t, p, trace, corrections, cfg, backend.as_ref())
}

pub fn srtr_with(
    t: &TransitionFn,
    p: &ParameterMap,
    trace: &Trace,
    corrections: &[Correction],
    cfg: &RepairConfig,
    backend: &dyn Backend,
) -> Result<Solutions, RepairError> {
    let cfg = RepairConfig {
        nonlinear: cfg.nonlinear && backend.nonlinear(),
        ..cfg.clone()
    };
    let (mut f, _) = correct_all(t, p, trace, corrections, &cfg)?;
    let (found, note) = explore(&mut f, backend, cfg.k)?;
    let solutions = found
        .iter()
        .enumerate()
        .map(|(i, (a, el))| to_solution(t, p, &f, a, i + 1, backend.id(), cfg.timings.then_some(*el)))
        .collect();
    Ok(Solutions {
        config: Some(cfg.clone()),
        corrections: corrections.len(),
        repairable: f.deltas.clone(),
        solutions,
        note,
    })
}

/// Re-runs the original transition function at every satisfied correction
/// with the repaired parameters. Returns the indices where the outcome does
/// not match the correction's polarity.
pub fn validate_solution(
    t: &TransitionFn,
    trace: &Trace,
    corrections: &[Correction],
    s: &RepairSolution,
) -> Vec<usize> {
    s.satisfied
        .iter()
        .copied()
        .filter(|&i| {
            let c = &corrections[i];
            let Some(e) = trace.get(c.t) else { return true };
            match eval_transition(t, &e.state, &e.inputs, &e.vars, &s.params) {
                Ok(out) => (out == c.state) != c.is_positive(),
                Err(_) => true,
            }
        })
        .collect()
}

/// Label-level helper: the output of `t` at `trace[i]` under `p`.
pub fn output_at(t: &TransitionFn, trace: &Trace, i: usize, p: &ParameterMap) -> Option<Label> {
    let e = trace.get(i)?;
    eval_transition(t, &e.state, &e.inputs, &e.vars, p).ok()
}
