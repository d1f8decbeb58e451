//! Execution traces.
//!
//! On disk a trace is JSON lines: an optional header line naming the
//! transition function and its declaration hash, then one element per line
//! with keys `t`, `inputs`, `vars` and `state`.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{Bindings, Label, TransitionFn, Value};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("missing binding `{0}`")]
    MissingBinding(String),
    #[error("unexpected binding `{0}`")]
    UnexpectedBinding(String),
    #[error("binding `{name}` has shape {found}, declared {declared}")]
    ShapeMismatch {
        name: String,
        found: crate::lang::Shape,
        declared: crate::lang::Shape,
    },
    #[error("undeclared state \"{0}\"")]
    UndeclaredState(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trace was recorded for `{found}` ({found_hash}), not `{expected}` ({expected_hash})")]
    DeclarationMismatch {
        expected: String,
        expected_hash: String,
        found: String,
        found_hash: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceElement {
    pub t: usize,
    pub inputs: Bindings,
    pub vars: Bindings,
    pub state: Label,
}

impl TraceElement {
    /// Structural equality with reals compared bitwise.
    pub fn bit_eq(&self, other: &TraceElement) -> bool {
        fn same(a: &Bindings, b: &Bindings) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|((ka, va), (kb, vb))| ka == kb && va.bit_eq(vb))
        }
        self.t == other.t
            && self.state == other.state
            && same(&self.inputs, &other.inputs)
            && same(&self.vars, &other.vars)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub rsm: String,
    pub decl_hash: String,
}

impl TraceHeader {
    pub fn for_transition(t: &TransitionFn) -> Self {
        TraceHeader {
            rsm: t.name.clone(),
            decl_hash: t.declaration_hash(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: TraceHeader,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub header: Option<TraceHeader>,
    elements: Vec<TraceElement>,
}

fn check_bindings(
    kind: &str,
    decls: &[(String, crate::lang::Shape)],
    b: &Bindings,
) -> Result<(), TraceError> {
    for (n, sh) in decls {
        match b.get(n) {
            None => return Err(TraceError::MissingBinding(format!("{kind}.{n}"))),
            Some(v) if v.shape() != *sh => {
                return Err(TraceError::ShapeMismatch {
                    name: format!("{kind}.{n}"),
                    found: v.shape(),
                    declared: *sh,
                })
            }
            _ => {}
        }
    }
    for k in b.keys() {
        if !decls.iter().any(|(n, _)| n == k) {
            return Err(TraceError::UnexpectedBinding(format!("{kind}.{k}")));
        }
    }
    Ok(())
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn for_transition(t: &TransitionFn) -> Self {
        Trace {
            header: Some(TraceHeader::for_transition(t)),
            elements: Vec::new(),
        }
    }

    /// Builds a trace from elements, renumbering `t` from zero.
    pub fn from_elements(header: Option<TraceHeader>, elements: Vec<TraceElement>) -> Self {
        let elements = elements
            .into_iter()
            .enumerate()
            .map(|(i, mut e)| {
                e.t = i;
                e
            })
            .collect();
        Trace { header, elements }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<&TraceElement> {
        self.elements.get(t)
    }

    pub fn elements(&self) -> &[TraceElement] {
        &self.elements
    }

    pub fn last(&self) -> Option<&TraceElement> {
        self.elements.last()
    }

    /// Elements `a..b`, unchanged.
    pub fn slice(&self, a: usize, b: usize) -> &[TraceElement] {
        &self.elements[a..b]
    }

    /// Appends a step after validating it against the declarations of `t`.
    pub fn record_step(
        &mut self,
        t: &TransitionFn,
        inputs: Bindings,
        vars: Bindings,
        state: Label,
    ) -> Result<&TraceElement, TraceError> {
        check_bindings("in", &t.inputs, &inputs)?;
        check_bindings("var", &t.vars, &vars)?;
        if !t.has_state(state.as_str()) {
            return Err(TraceError::UndeclaredState(state.to_string()));
        }
        self.elements.push(TraceElement {
            t: self.elements.len(),
            inputs,
            vars,
            state,
        });
        Ok(self.elements.last().unwrap())
    }

    /// Appends without validation beyond renumbering.
    pub fn push_unchecked(&mut self, mut e: TraceElement) {
        e.t = self.elements.len();
        self.elements.push(e);
    }

    /// Checks the header hash and every element's binding domains.
    pub fn check_against(&self, t: &TransitionFn) -> Result<(), TraceError> {
        if let Some(h) = &self.header {
            let expected = TraceHeader::for_transition(t);
            if h.decl_hash != expected.decl_hash {
                return Err(TraceError::DeclarationMismatch {
                    expected: expected.rsm,
                    expected_hash: expected.decl_hash,
                    found: h.rsm.clone(),
                    found_hash: h.decl_hash.clone(),
                });
            }
        }
        for e in &self.elements {
            check_bindings("in", &t.inputs, &e.inputs)?;
            check_bindings("var", &t.vars, &e.vars)?;
            if !t.has_state(e.state.as_str()) {
                return Err(TraceError::UndeclaredState(e.state.to_string()));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        if let Some(h) = &self.header {
            serde_json::to_writer(&mut w, &HeaderLine { header: h.clone() }).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
        }
        for e in &self.elements {
            for (k, v) in e.inputs.iter().chain(&e.vars) {
                let finite = match v {
                    Value::Real(x) => x.is_finite(),
                    Value::Vec2([x, y]) => x.is_finite() && y.is_finite(),
                    _ => true,
                };
                if !finite {
                    return Err(TraceError::NonFinite(k.clone()));
                }
            }
            serde_json::to_writer(&mut w, e).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut trace = Trace::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if i == 0 && line.trim_start().starts_with("{\"header\"") {
                let h: HeaderLine = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
                    line: lineno,
                    msg: e.to_string(),
                })?;
                trace.header = Some(h.header);
                continue;
            }
            let e: TraceElement = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
                line: lineno,
                msg: e.to_string(),
            })?;
            if e.t != trace.elements.len() {
                return Err(TraceError::Malformed {
                    line: lineno,
                    msg: format!("expected t = {}, found {}", trace.elements.len(), e.t),
                });
            }
            trace.elements.push(e);
        }
        Ok(trace)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let f = fs::File::create(path)?;
        self.write_to(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let f = fs::File::open(path)?;
        Self::read_from(BufReader::new(f))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_transition;

    fn rsm() -> TransitionFn {
        parse_transition(
            r#"states { "START", "GOTO" } inputs { time: real, loc: vec2 } vars { k: real }
               fn transition { return "GOTO"; }"#,
        )
        .unwrap()
    }

    fn step(time: f64) -> (Bindings, Bindings) {
        let mut i = Bindings::new();
        i.insert("time".into(), Value::Real(time));
        i.insert("loc".into(), Value::Vec2([0.1, -3.5]));
        let mut v = Bindings::new();
        v.insert("k".into(), Value::Real(2.0));
        (i, v)
    }

    #[test]
    fn record_numbers_steps() {
        let t = rsm();
        let mut tr = Trace::for_transition(&t);
        let (i, v) = step(0.0);
        tr.record_step(&t, i, v, Label::new("GOTO")).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.get(0).unwrap().t, 0);
        for k in 1..5 {
            let (i, v) = step(k as f64);
            tr.record_step(&t, i, v, Label::new("GOTO")).unwrap();
        }
        let ts: Vec<usize> = tr.elements().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn record_rejects_missing_input() {
        let t = rsm();
        let mut tr = Trace::new();
        let (mut i, v) = step(0.0);
        i.remove("time");
        let err = tr.record_step(&t, i, v, Label::new("GOTO")).unwrap_err();
        assert!(err.to_string().contains("time"), "{err}");
    }

    #[test]
    fn empty_trace_has_empty_body() {
        let tr = Trace::new();
        assert_eq!(tr.to_jsonl(), "");
        let back = Trace::read_from("".as_bytes()).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn truncated_line_is_reported() {
        let t = rsm();
        let mut tr = Trace::for_transition(&t);
        for k in 0..3 {
            let (i, v) = step(k as f64);
            tr.record_step(&t, i, v, Label::new("GOTO")).unwrap();
        }
        let text = tr.to_jsonl();
        let cut = &text[..text.len() - 10];
        match Trace::read_from(cut.as_bytes()) {
            Err(TraceError::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_mismatch_is_detected() {
        let t = rsm();
        let other = parse_transition(r#"states { "X" } fn transition { return "X"; }"#).unwrap();
        let tr = Trace::for_transition(&other);
        assert!(matches!(
            tr.check_against(&t),
            Err(TraceError::DeclarationMismatch { .. })
        ));
    }

    #[test]
    fn slice_preserves_identity() {
        let t = rsm();
        let mut tr = Trace::new();
        for k in 0..6 {
            let (i, v) = step(k as f64);
            tr.record_step(&t, i, v, Label::new("GOTO")).unwrap();
        }
        let s = tr.slice(2, 5);
        for (i, e) in s.iter().enumerate() {
            assert_eq!(e, tr.get(2 + i).unwrap());
        }
    }
}
