//! User corrections and the continue-correction workflow.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{eval_transition, Bindings, EvalError, Label, ParameterMap, TransitionFn};
use crate::trace::{Trace, TraceElement};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionKind {
    /// The output at `t` should be `state`.
    Immediate,
    /// The output at `t` must not be `state`.
    Negative,
    /// Like immediate, but reinforces behaviour that was already correct.
    Nominal,
}

/// A correction of the transition taken at trace element `t`. `state` is the
/// desired (or, for negative corrections, forbidden) output of the transition
/// function at that element, i.e. the state at `t + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub kind: CorrectionKind,
    pub t: usize,
    pub state: Label,
    /// Parameters this correction may adjust; all repairable ones if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<String>>,
}

impl Correction {
    pub fn is_positive(&self) -> bool {
        self.kind != CorrectionKind::Negative
    }
}

#[derive(Debug, Error)]
pub enum CorrectionError {
    #[error("timestep {t} is out of range for a trace of length {len}")]
    OutOfRange { t: usize, len: usize },
    #[error("undeclared state \"{0}\"")]
    UndeclaredState(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("cannot fork at the end state \"{0}\": it has no outgoing transitions")]
    ForkAtEnd(String),
    #[error("cannot reconstruct world state: {0}")]
    Reconstruct(String),
    #[error("continue session is already finalized")]
    Finalized,
    #[error("episode terminated; session closed without a positive correction")]
    Terminated,
    #[error("timestep {0} was not visited by this session")]
    NotVisited(usize),
    #[error("masked transition returned the forbidden state \"{0}\"")]
    MaskViolated(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("corrections file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_target(t: &TransitionFn, state: &str, designated: Option<&[String]>) -> Result<(), CorrectionError> {
    if !t.has_state(state) {
        return Err(CorrectionError::UndeclaredState(state.to_string()));
    }
    for p in designated.unwrap_or_default() {
        if !t.has_param(p) {
            return Err(CorrectionError::UnknownParam(p.clone()));
        }
    }
    Ok(())
}

fn make(
    kind: CorrectionKind,
    t: &TransitionFn,
    trace: &Trace,
    at: usize,
    state: &str,
    designated: Option<&[String]>,
) -> Result<Correction, CorrectionError> {
    if at >= trace.len() {
        return Err(CorrectionError::OutOfRange { t: at, len: trace.len() });
    }
    check_target(t, state, designated)?;
    Ok(Correction {
        kind,
        t: at,
        state: Label::new(state),
        params: designated.map(<[String]>::to_vec),
    })
}

pub fn immediate(
    t: &TransitionFn,
    trace: &Trace,
    at: usize,
    desired: &str,
    designated: Option<&[String]>,
) -> Result<Correction, CorrectionError> {
    make(CorrectionKind::Immediate, t, trace, at, desired, designated)
}

pub fn negative(
    t: &TransitionFn,
    trace: &Trace,
    at: usize,
    forbidden: &str,
    designated: Option<&[String]>,
) -> Result<Correction, CorrectionError> {
    make(CorrectionKind::Negative, t, trace, at, forbidden, designated)
}

/// One nominal correction per index, targeting the recorded next state.
pub fn nominal_from_trace(
    t: &TransitionFn,
    trace: &Trace,
    indices: &[usize],
    designated: Option<&[String]>,
) -> Result<Vec<Correction>, CorrectionError> {
    indices
        .iter()
        .map(|&i| {
            let next = trace
                .get(i + 1)
                .ok_or(CorrectionError::OutOfRange { t: i, len: trace.len() })?;
            make(CorrectionKind::Nominal, t, trace, i, next.state.as_str(), designated)
        })
        .collect()
}

/// Checks that every correction indexes `trace` and names declared states
/// and parameters.
pub fn validate(t: &TransitionFn, trace: &Trace, cs: &[Correction]) -> Result<(), CorrectionError> {
    for c in cs {
        if c.t >= trace.len() {
            return Err(CorrectionError::OutOfRange { t: c.t, len: trace.len() });
        }
        check_target(t, c.state.as_str(), c.params.as_deref())?;
    }
    Ok(())
}

pub fn to_json(cs: &[Correction]) -> String {
    let mut s = serde_json::to_string_pretty(cs).expect("corrections serialize");
    s.push('\n');
    s
}

pub fn save(cs: &[Correction], path: impl AsRef<Path>) -> Result<(), CorrectionError> {
    fs::write(path, to_json(cs))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Correction>, CorrectionError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Concatenates several traces (with their corrections) into one, shifting
/// correction indices. Lets a single repair draw corrections from many
/// episodes.
pub fn bundle(parts: &[(&Trace, &[Correction])]) -> (Trace, Vec<Correction>) {
    let header = parts.iter().find_map(|(tr, _)| tr.header.clone());
    let mut elems = Vec::new();
    let mut out = Vec::new();
    for (tr, cs) in parts {
        let off = elems.len();
        elems.extend(tr.elements().iter().cloned());
        out.extend(cs.iter().map(|c| Correction { t: c.t + off, ..c.clone() }));
    }
    (Trace::from_elements(header, elems), out)
}

/// Why a forked world stopped advancing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Terminated(pub String);

/// A simulator world re-created from a trace element.
pub trait WorldFork {
    /// Inputs and variables at the current tick.
    fn observe(&self) -> (Bindings, Bindings);
    /// Runs one tick with the machine in `state` (the output of the
    /// transition function for the current tick).
    fn advance(&mut self, state: &Label) -> Result<(), Terminated>;
}

/// A simulator that can fork its world from a recorded trace element.
pub trait Forkable {
    fn fork(
        &self,
        t: &TransitionFn,
        p: &ParameterMap,
        elem: &TraceElement,
    ) -> Result<Box<dyn WorldFork + Send>, String>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Finalized,
    Closed,
}

/// A continue correction in progress: the world is forked at element `t` and
/// stepped forward with transitions into the forbidden state suppressed.
pub struct ContinueSession {
    rsm: TransitionFn,
    params: ParameterMap,
    forbidden: Label,
    designated: Option<Vec<String>>,
    world: Box<dyn WorldFork + Send>,
    base_t: usize,
    /// original[..t] followed by the forked elements.
    trace: Trace,
    negatives: Vec<Correction>,
    status: SessionStatus,
}

impl std::fmt::Debug for ContinueSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinueSession")
            .field("base_t", &self.base_t)
            .field("forbidden", &self.forbidden)
            .field("len", &self.trace.len())
            .field("status", &self.status)
            .finish()
    }
}

/// Forks the world at `trace[at]`.
pub fn fork_continue(
    sim: &dyn Forkable,
    rsm: &TransitionFn,
    params: &ParameterMap,
    trace: &Trace,
    at: usize,
    forbidden: &str,
    designated: Option<&[String]>,
) -> Result<ContinueSession, CorrectionError> {
    let elem = trace
        .get(at)
        .ok_or(CorrectionError::OutOfRange { t: at, len: trace.len() })?;
    check_target(rsm, forbidden, designated)?;
    if elem.state == *rsm.end_state() {
        return Err(CorrectionError::ForkAtEnd(elem.state.to_string()));
    }
    let world = sim
        .fork(rsm, params, elem)
        .map_err(CorrectionError::Reconstruct)?;
    let prefix: Vec<TraceElement> = trace.slice(0, at + 1).to_vec();
    Ok(ContinueSession {
        rsm: rsm.clone(),
        params: params.clone(),
        forbidden: Label::new(forbidden),
        designated: designated.map(<[String]>::to_vec),
        world,
        base_t: at,
        trace: Trace::from_elements(trace.header.clone(), prefix),
        negatives: Vec::new(),
        status: SessionStatus::Open,
    })
}

impl ContinueSession {
    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn base_t(&self) -> usize {
        self.base_t
    }

    pub fn forbidden(&self) -> &Label {
        &self.forbidden
    }

    /// The fork's trace: the original prefix up to the fork point followed by
    /// every element visited so far.
    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// The element the next step starts from.
    pub fn frontier(&self) -> &TraceElement {
        self.trace.last().expect("session trace is never empty")
    }

    pub fn negatives(&self) -> &[Correction] {
        &self.negatives
    }

    fn correction(&self, kind: CorrectionKind, t: usize) -> Correction {
        Correction {
            kind,
            t,
            state: self.forbidden.clone(),
            params: self.designated.clone(),
        }
    }

    /// Emits a negative correction for the frontier element and advances the
    /// world one tick under the masked transition function.
    pub fn step(&mut self) -> Result<(&TraceElement, &Correction), CorrectionError> {
        if self.status != SessionStatus::Open {
            return Err(CorrectionError::Finalized);
        }
        let cur = self.frontier().clone();
        let out = eval_transition(&self.rsm, &cur.state, &cur.inputs, &cur.vars, &self.params)?;
        let next = if out == self.forbidden { cur.state.clone() } else { out };
        if next == self.forbidden {
            return Err(CorrectionError::MaskViolated(next.to_string()));
        }
        if let Err(Terminated(_)) = self.world.advance(&next) {
            self.status = SessionStatus::Closed;
            return Err(CorrectionError::Terminated);
        }
        self.negatives.push(self.correction(CorrectionKind::Negative, cur.t));
        let (inputs, vars) = self.world.observe();
        self.trace.push_unchecked(TraceElement {
            t: 0,
            inputs,
            vars,
            state: next,
        });
        Ok((self.trace.last().unwrap(), self.negatives.last().unwrap()))
    }

    /// Steps until `stop` holds for the frontier element (checked before each
    /// step, so a predicate true at the fork point stops immediately) or
    /// `max_steps` is exhausted.
    pub fn run_until(
        &mut self,
        mut stop: impl FnMut(&TraceElement) -> bool,
        max_steps: usize,
    ) -> Result<usize, CorrectionError> {
        for _ in 0..max_steps {
            if stop(self.frontier()) {
                return Ok(self.frontier().t);
            }
            self.step()?;
        }
        if stop(self.frontier()) {
            Ok(self.frontier().t)
        } else {
            Err(CorrectionError::Terminated)
        }
    }

    /// Closes the session at visited timestep `stop_t`: negatives for every
    /// element before `stop_t` plus one positive correction at `stop_t`
    /// demanding the forbidden state.
    pub fn finalize(&mut self, stop_t: usize) -> Result<Vec<Correction>, CorrectionError> {
        if self.status != SessionStatus::Open {
            return Err(CorrectionError::Finalized);
        }
        if stop_t < self.base_t || stop_t >= self.trace.len() {
            return Err(CorrectionError::NotVisited(stop_t));
        }
        self.status = SessionStatus::Finalized;
        let mut out: Vec<Correction> = self
            .negatives
            .iter()
            .filter(|c| c.t < stop_t)
            .cloned()
            .collect();
        out.push(self.correction(CorrectionKind::Immediate, stop_t));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse_transition, Value};

    /// A 1-D world: `x` moves by +1 per tick in state GO and stays in WAIT.
    struct Line;
    struct LineFork {
        x: f64,
        limit: f64,
    }

    impl WorldFork for LineFork {
        fn observe(&self) -> (Bindings, Bindings) {
            ([("x".to_string(), Value::Real(self.x))].into_iter().collect(), Bindings::new())
        }
        fn advance(&mut self, state: &Label) -> Result<(), Terminated> {
            if state.as_str() == "GO" {
                self.x += 1.0;
            }
            if self.x > self.limit {
                return Err(Terminated("out of bounds".into()));
            }
            Ok(())
        }
    }

    impl Forkable for Line {
        fn fork(&self, _: &TransitionFn, _: &ParameterMap, e: &TraceElement) -> Result<Box<dyn WorldFork + Send>, String> {
            let x = e.inputs.get("x").and_then(Value::as_real).ok_or("missing x")?;
            Ok(Box::new(LineFork { x, limit: 100.0 }))
        }
    }

    fn rsm() -> TransitionFn {
        parse_transition(
            r#"states { "GO", "STOP", "END" } inputs { x: real } params { at }
               fn transition {
                 if (state == "GO" && in.x > param.at) return "STOP";
                 if (state == "STOP") return "END";
                 return "GO";
               }"#,
        )
        .unwrap()
    }

    fn trace(t: &TransitionFn, n: usize) -> Trace {
        let mut tr = Trace::for_transition(t);
        for i in 0..n {
            let inputs = [("x".to_string(), Value::Real(i as f64))].into_iter().collect();
            tr.record_step(t, inputs, Bindings::new(), Label::new("GO")).unwrap();
        }
        tr
    }

    #[test]
    fn immediate_checks_range_and_state() {
        let t = rsm();
        let tr = trace(&t, 6);
        let c = immediate(&t, &tr, 5, "STOP", None).unwrap();
        assert_eq!(c.t, 5);
        assert!(matches!(
            immediate(&t, &tr, 6, "STOP", None),
            Err(CorrectionError::OutOfRange { t: 6, len: 6 })
        ));
        assert!(matches!(
            immediate(&t, &tr, 1, "KICK", None),
            Err(CorrectionError::UndeclaredState(_))
        ));
    }

    #[test]
    fn nominal_targets_next_state() {
        let t = rsm();
        let tr = trace(&t, 4);
        let cs = nominal_from_trace(&t, &tr, &[0, 2], None).unwrap();
        assert_eq!(cs.len(), 2);
        assert!(cs.iter().all(|c| c.state.as_str() == "GO" && c.kind == CorrectionKind::Nominal));
        assert!(nominal_from_trace(&t, &tr, &[3], None).is_err());
        assert!(nominal_from_trace(&t, &tr, &[], None).unwrap().is_empty());
    }

    #[test]
    fn json_format_is_stable() {
        let c = Correction {
            kind: CorrectionKind::Immediate,
            t: 5,
            state: Label::new("KICK"),
            params: None,
        };
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"kind":"immediate","t":5,"state":"KICK"}"#
        );
        let back: Vec<Correction> = serde_json::from_str(&to_json(&[c.clone()])).unwrap();
        assert_eq!(back, vec![c]);
    }

    #[test]
    fn continue_session_counts() {
        let t = rsm();
        let tr = trace(&t, 10);
        let p = ParameterMap::new().with("at", 2.5);
        let mut s = fork_continue(&Line, &t, &p, &tr, 3, "STOP", None).unwrap();
        for k in 0..26 {
            let (e, c) = s.step().unwrap();
            assert_eq!(e.t, 4 + k);
            assert_eq!(c.t, 3 + k);
            assert_eq!(c.kind, CorrectionKind::Negative);
            // masking: still GO although the unmasked function says STOP
            assert_eq!(e.state.as_str(), "GO");
        }
        let cs = s.finalize(29).unwrap();
        assert_eq!(cs.len(), 27);
        assert_eq!(cs.iter().filter(|c| c.kind == CorrectionKind::Negative).count(), 26);
        assert_eq!(cs.last().unwrap().kind, CorrectionKind::Immediate);
        assert_eq!(cs.last().unwrap().t, 29);
        assert!(matches!(s.step(), Err(CorrectionError::Finalized)));
        assert_eq!(s.trace().len(), 30);
    }

    #[test]
    fn finalize_at_fork_point_yields_only_positive() {
        let t = rsm();
        let tr = trace(&t, 10);
        let p = ParameterMap::new().with("at", 2.5);
        let mut s = fork_continue(&Line, &t, &p, &tr, 3, "STOP", None).unwrap();
        let cs = s.finalize(3).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].kind, CorrectionKind::Immediate);
    }

    #[test]
    fn fork_at_end_is_rejected() {
        let t = rsm();
        let mut tr = trace(&t, 2);
        let inputs = [("x".to_string(), Value::Real(0.0))].into_iter().collect();
        tr.record_step(&t, inputs, Bindings::new(), Label::new("END")).unwrap();
        let p = ParameterMap::new().with("at", 2.5);
        assert!(matches!(
            fork_continue(&Line, &t, &p, &tr, 2, "STOP", None),
            Err(CorrectionError::ForkAtEnd(_))
        ));
    }

    #[test]
    fn bundle_shifts_indices() {
        let t = rsm();
        let a = trace(&t, 3);
        let b = trace(&t, 4);
        let ca = vec![immediate(&t, &a, 1, "STOP", None).unwrap()];
        let cb = vec![immediate(&t, &b, 2, "STOP", None).unwrap()];
        let (tr, cs) = bundle(&[(&a, &ca), (&b, &cb)]);
        assert_eq!(tr.len(), 7);
        assert_eq!(cs[0].t, 1);
        assert_eq!(cs[1].t, 5);
        assert_eq!(tr.get(5).unwrap().inputs, b.get(2).unwrap().inputs);
    }
}
