mod common;

use common::gen;
use proptest::prelude::*;
use rsm_core::trace::{Trace, TraceError};
use rsm_core::Value;

fn random_trace(seed: u64) -> Trace {
    let mut r = gen::rng(seed);
    let t = gen::program(&mut r);
    let mut trace = Trace::for_transition(&t);
    let n = (seed % 12) as usize;
    for i in 0..n {
        let mut e = gen::element(&mut r, &t, i);
        // awkward reals: subnormals, huge magnitudes, negative zero
        if let Some(Value::Real(x)) = e.inputs.get_mut("x0") {
            *x = match i % 4 {
                0 => f64::MIN_POSITIVE / 3.0,
                1 => -0.0,
                2 => 1.0e300 * (*x + 0.5),
                _ => *x / 3.0,
            };
        }
        trace.record_step(&t, e.inputs, e.vars, e.state).unwrap();
    }
    trace
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>()) {
        let trace = random_trace(seed);
        let back = Trace::read_from(trace.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(back.len(), trace.len());
        prop_assert_eq!(&back.header, &trace.header);
        for (a, b) in trace.elements().iter().zip(back.elements()) {
            prop_assert!(a.bit_eq(b), "{:?} != {:?}", a, b);
        }
    }

    #[test]
    fn slicing_preserves_elements(seed in any::<u64>(), a in 0usize..12, w in 0usize..12) {
        let trace = random_trace(seed);
        let a = a.min(trace.len());
        let b = (a + w).min(trace.len());
        for (i, e) in trace.slice(a, b).iter().enumerate() {
            prop_assert!(e.bit_eq(trace.get(a + i).unwrap()));
        }
    }
}

#[test]
fn running_example_element_round_trips() {
    let trace = common::example_trace();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("example.trace.jsonl");
    trace.save(&path).unwrap();
    let back = Trace::load(&path).unwrap();
    assert!(back.get(5).unwrap().bit_eq(&common::tau5(5)));
    back.check_against(&common::attacker()).unwrap();
}

#[test]
fn record_step_numbers_and_validates() {
    let t = common::attacker();
    let mut trace = Trace::for_transition(&t);
    for i in 0..5 {
        let e = common::tau5(i);
        assert_eq!(trace.record_step(&t, e.inputs, e.vars, e.state).unwrap().t, i);
    }
    let mut e = common::tau5(0);
    e.inputs.remove("time");
    let err = trace.record_step(&t, e.inputs, e.vars, e.state).unwrap_err();
    assert!(matches!(&err, TraceError::MissingBinding(n) if n.contains("time")), "{err}");
    assert_eq!(trace.len(), 5);
}

#[test]
fn empty_trace_has_only_a_header() {
    let trace = Trace::new();
    let text = trace.to_jsonl();
    assert!(text.is_empty());
    assert!(Trace::read_from(text.as_bytes()).unwrap().is_empty());
}

#[test]
fn truncated_last_line_is_reported() {
    let text = common::example_trace().to_jsonl();
    let cut = &text[..text.len() - 20];
    let lines = cut.lines().count();
    match Trace::read_from(cut.as_bytes()) {
        Err(TraceError::Malformed { line, .. }) => assert_eq!(line, lines),
        other => panic!("expected a malformed-record error, got {other:?}"),
    }
}

#[test]
fn declaration_mismatch_is_detected() {
    let trace = common::example_trace();
    let other = rsm_core::parse_transition(r#"states { "START", "END" } fn transition { return "END"; }"#).unwrap();
    assert!(matches!(trace.check_against(&other), Err(TraceError::DeclarationMismatch { .. })));
}
