//! Operations behind the `rsm` command line, shared with the HTTP service so
//! both produce the same bytes for the same inputs.

use std::fs;
use std::path::Path;

use rsm_core::corrections::{self, fork_continue, Correction, CorrectionError};
use rsm_core::lang::parse_transition_named;
use rsm_core::repair::{correct_all, encode, srtr, RepairConfig, RepairError, Solutions};
use rsm_core::trace::{Trace, TraceError};
use rsm_core::{ParameterMap, TransitionFn};
use rsm_sim::fixtures::StopRule;
use rsm_sim::grid::{evaluate_grid, GridSpec, Heatmap};
use rsm_sim::{check_compatible, corpus, run_episode, Episode, Scenario, SimError, Simulator, Task};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or unreadable / inconsistent input files.
    #[error("{0}")]
    Usage(String),
    /// The inputs were fine but the answer is negative (episode failed,
    /// no repair exists, the fork terminated).
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl From<RepairError> for CliError {
    fn from(e: RepairError) -> Self {
        if e.is_backend() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CorrectionError> for CliError {
    fn from(e: CorrectionError) -> Self {
        match e {
            CorrectionError::Terminated => CliError::Domain(e.to_string()),
            e => CliError::Usage(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = read(path)?;
    if text.trim().is_empty() {
        return Err(CliError::Usage(format!("{}: empty {what} file", path.display())));
    }
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {what}: {e}", path.display())))
}

/// A transition function from a `.rsm` file, or a corpus entry by name.
pub fn load_rsm(spec: &str) -> Result<TransitionFn, CliError> {
    let path = Path::new(spec);
    if path.exists() {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("rsm");
        return parse_transition_named(name, &read(path)?)
            .map_err(|e| CliError::Usage(format!("{spec}: {e}")));
    }
    corpus::load(spec).ok_or_else(|| CliError::Usage(format!("{spec}: no such file or corpus entry")))
}

/// Parameter values (a JSON object) checked against the declarations.
pub fn load_params(path: &Path, t: &TransitionFn) -> Result<ParameterMap, CliError> {
    let p: ParameterMap = json(path, "parameters")?;
    check_params(&p, t)?;
    Ok(p)
}

pub fn check_params(p: &ParameterMap, t: &TransitionFn) -> Result<(), CliError> {
    p.validate_for(t).map_err(|e| CliError::Usage(format!("parameters: {e}")))
}

/// A trace file checked against `t`'s declarations.
pub fn load_trace(path: &Path, t: &TransitionFn) -> Result<Trace, CliError> {
    let trace = Trace::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    trace.check_against(t)?;
    Ok(trace)
}

pub fn load_corrections(path: &Path, t: &TransitionFn, trace: &Trace) -> Result<Vec<Correction>, CliError> {
    let cs: Vec<Correction> = json(path, "corrections")?;
    corrections::validate(t, trace, &cs)?;
    Ok(cs)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    json(path, "scenario")
}

/// `attacker`, `docker`, or a grid spec file.
pub fn load_grid(spec: &str) -> Result<GridSpec, CliError> {
    match spec {
        "attacker" => Ok(GridSpec::attacker()),
        "docker" => Ok(GridSpec::docker()),
        _ => json(Path::new(spec), "grid"),
    }
}

pub fn load_heatmap(path: &Path) -> Result<Heatmap, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Heatmap::from_csv(f).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Config file (same keys as [`RepairConfig`]) under command-line overrides.
pub fn load_config(path: Option<&Path>) -> Result<RepairConfig, CliError> {
    match path {
        Some(p) => json(p, "config"),
        None => Ok(RepairConfig::default()),
    }
}

/// The simulator task whose channels `t` uses.
pub fn infer_task(t: &TransitionFn) -> Result<Task, CliError> {
    [Task::Goal, Task::Dock]
        .into_iter()
        .find(|&k| check_compatible(k, t).is_ok())
        .ok_or_else(|| CliError::Usage(format!("`{}` fits neither simulator", t.name)))
}

/// Printed after `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub outcome: rsm_sim::Outcome,
    pub success: bool,
    pub ticks: u64,
    pub elements: usize,
    /// States in order of first visit.
    pub states: Vec<String>,
}

impl EpisodeSummary {
    pub fn of(ep: &Episode) -> Self {
        let mut states: Vec<String> = Vec::new();
        for e in ep.trace.elements() {
            if !states.iter().any(|s| s == e.state.as_str()) {
                states.push(e.state.to_string());
            }
        }
        EpisodeSummary {
            outcome: ep.outcome,
            success: ep.success,
            ticks: ep.ticks,
            elements: ep.trace.len(),
            states,
        }
    }
}

pub fn simulate(t: &TransitionFn, p: &ParameterMap, s: &Scenario) -> Result<Episode, CliError> {
    check_params(p, t)?;
    Ok(run_episode(t, p, s)?)
}

pub fn repair(
    t: &TransitionFn,
    p: &ParameterMap,
    trace: &Trace,
    cs: &[Correction],
    cfg: &RepairConfig,
) -> Result<Solutions, CliError> {
    check_params(p, t)?;
    let sols = srtr(t, p, trace, cs, cfg)?;
    if sols.solutions.is_empty() {
        return Err(CliError::Domain(sols.note.unwrap_or_else(|| "no solution".into())));
    }
    Ok(sols)
}

/// The residual of every correction, as source text.
pub fn dump_residuals(t: &TransitionFn, p: &ParameterMap, trace: &Trace, cs: &[Correction], cfg: &RepairConfig) -> Result<String, CliError> {
    let (_, phis) = correct_all(t, p, trace, cs, cfg)?;
    let mut out = String::new();
    for (i, (c, phi)) in cs.iter().zip(&phis).enumerate() {
        out.push_str(&format!("// correction {i}: {:?} t={} state={}\n", c.kind, c.t, c.state));
        out.push_str(&phi.residual.render());
        out.push_str(&format!("// phi: {}\n", phi.render(p)));
        if let Some(d) = &phi.diagnostic {
            out.push_str(&format!("// note: {d}\n"));
        }
    }
    Ok(out)
}

/// The SMT-LIB script a solver backend would receive.
pub fn dump_smt(t: &TransitionFn, p: &ParameterMap, trace: &Trace, cs: &[Correction], cfg: &RepairConfig) -> Result<String, CliError> {
    let (f, _) = correct_all(t, p, trace, cs, cfg)?;
    Ok(encode(&f))
}

pub fn evaluate(t: &TransitionFn, p: &ParameterMap, g: &GridSpec) -> Result<Heatmap, CliError> {
    check_params(p, t)?;
    Ok(evaluate_grid(t, p, g)?)
}

/// Per-cell `after − before`.
pub fn compare(before: &Heatmap, after: &Heatmap) -> Result<Heatmap, CliError> {
    before.diff(after).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn compare_summary(before: &Heatmap, after: &Heatmap) -> String {
    let (a, b) = (before.aggregate(), after.aggregate());
    format!("aggregate before {a:.4} after {b:.4} delta {:+.4}\n", b - a)
}

/// Runs a continue fork headlessly: suppresses `forbidden` from `trace[at]`
/// until `stop` holds, then returns the generated corrections.
#[allow(clippy::too_many_arguments)]
pub fn continue_fork(
    t: &TransitionFn,
    p: &ParameterMap,
    trace: &Trace,
    at: usize,
    forbidden: &str,
    stop: StopRule,
    max_steps: usize,
    designated: Option<&[String]>,
) -> Result<Vec<Correction>, CliError> {
    check_params(p, t)?;
    let sim = Simulator::new(infer_task(t)?);
    let mut s = fork_continue(&sim, t, p, trace, at, forbidden, designated)?;
    let stop_t = s.run_until(|e| stop.matches(e), max_steps)?;
    Ok(s.finalize(stop_t)?)
}
