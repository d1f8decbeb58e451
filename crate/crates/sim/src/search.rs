//! Exhaustive parameter search, and corrections generated by comparing a
//! failing parameter set against a nominal one.

use rsm_core::corrections::{Correction, CorrectionKind};
use rsm_core::trace::Trace;
use rsm_core::{eval_transition, Label, ParameterMap, TransitionFn};

use crate::episode::{run_episode, Episode, Scenario, SimError};

/// First element of `trace` (recorded under `failing`) where the nominal
/// parameters pick a different next state. Returns an immediate correction
/// toward the nominal choice. Up to that element both parameter sets drive
/// the world identically, so this is the first divergence of the two traces.
pub fn first_divergence(
    t: &TransitionFn,
    nominal: &ParameterMap,
    failing: &ParameterMap,
    trace: &Trace,
) -> Result<Option<Correction>, SimError> {
    for e in trace.elements() {
        if e.state == *t.end_state() {
            break;
        }
        let want = eval_transition(t, &e.state, &e.inputs, &e.vars, nominal)?;
        let got = eval_transition(t, &e.state, &e.inputs, &e.vars, failing)?;
        if want != got {
            return Ok(Some(Correction {
                kind: CorrectionKind::Immediate,
                t: e.t,
                state: want,
                params: None,
            }));
        }
    }
    Ok(None)
}

/// Runs `s` under `failing` and returns the episode with its first-divergence
/// correction, if the run fails and the traces diverge.
pub fn divergence_correction(
    t: &TransitionFn,
    nominal: &ParameterMap,
    failing: &ParameterMap,
    s: &Scenario,
) -> Result<Option<(Episode, Correction)>, SimError> {
    let ep = run_episode(t, failing, s)?;
    if ep.success {
        return Ok(None);
    }
    Ok(first_divergence(t, nominal, failing, &ep.trace)?.map(|c| (ep, c)))
}

/// Values tried for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub param: String,
    pub values: Vec<f64>,
}

impl Axis {
    /// `n` evenly spaced values from `lo` to `hi` inclusive.
    pub fn linspace(param: &str, lo: f64, hi: f64, n: usize) -> Self {
        let values = if n < 2 {
            vec![lo]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        Axis {
            param: param.to_string(),
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub params: ParameterMap,
    /// Corrections the best point satisfies.
    pub agreement: usize,
    pub evaluated: usize,
    /// No grid point satisfied any correction.
    pub all_failed: bool,
}

fn satisfied(t: &TransitionFn, p: &ParameterMap, trace: &Trace, c: &Correction) -> bool {
    let Some(e) = trace.get(c.t) else { return false };
    match eval_transition(t, &e.state, &e.inputs, &e.vars, p) {
        Ok(out) => (out == c.state) == c.is_positive(),
        Err(_) => false,
    }
}

/// Tries every point of the product of `axes` and keeps the one satisfying
/// the most corrections (labelled positions); ties go to the smallest L1
/// distance from `base`, then to the first point in axis order.
pub fn exhaustive_search(
    t: &TransitionFn,
    base: &ParameterMap,
    axes: &[Axis],
    trace: &Trace,
    labels: &[Correction],
) -> SearchResult {
    let mut best: Option<(usize, f64, ParameterMap)> = None;
    let mut idx = vec![0usize; axes.len()];
    let mut evaluated = 0;
    let mut p = base.clone();
    if axes.iter().all(|a| !a.values.is_empty()) {
        'outer: loop {
            let mut dist = 0.0;
            for (a, &i) in axes.iter().zip(&idx) {
                let v = a.values[i];
                dist += (v - base.get(&a.param).unwrap_or(0.0)).abs();
                p.set(&a.param, v);
            }
            let agree = labels.iter().filter(|c| satisfied(t, &p, trace, c)).count();
            evaluated += 1;
            let better = match &best {
                None => true,
                Some((ba, bd, _)) => agree > *ba || (agree == *ba && dist < *bd),
            };
            if better {
                best = Some((agree, dist, p.clone()));
            }
            // odometer, last axis fastest
            let mut k = axes.len();
            loop {
                if k == 0 {
                    break 'outer;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < axes[k].values.len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
    let (agreement, _, params) = best.unwrap_or((0, 0.0, base.clone()));
    SearchResult {
        params,
        agreement,
        evaluated,
        all_failed: agreement == 0 && !labels.is_empty(),
    }
}

/// Labels for [`exhaustive_search`] from a state sequence: `positive` picks
/// an immediate correction toward `state`, otherwise a negative one.
pub fn label(t: usize, state: &str, positive: bool) -> Correction {
    Correction {
        kind: if positive {
            CorrectionKind::Immediate
        } else {
            CorrectionKind::Negative
        },
        t,
        state: Label::new(state),
        params: None,
    }
}
