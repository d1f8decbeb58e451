//! Exhaustive search and first-divergence corrections.

use rsm_core::corrections::CorrectionKind;
use rsm_core::trace::Trace;
use rsm_core::{eval_transition, parse_transition, Bindings, Label, ParameterMap, TransitionFn, Value};
use rsm_sim::fixtures;
use rsm_sim::grid::GridSpec;
use rsm_sim::search::{divergence_correction, exhaustive_search, first_divergence, label, Axis};
use rsm_sim::corpus;

fn threshold() -> (TransitionFn, Trace) {
    let t = parse_transition(
        r#"states { "A", "B" } inputs { x: real } vars {} params { a, b }
           fn transition { if (in.x < param.a) return "B"; return "A"; }"#,
    )
    .unwrap();
    let mut trace = Trace::for_transition(&t);
    for x in [1.0, 2.0, 3.0, 4.0] {
        let i: Bindings = [("x".to_string(), Value::Real(x))].into_iter().collect();
        trace.push_unchecked(rsm_core::trace::TraceElement { t: trace.len(), inputs: i, vars: Bindings::new(), state: Label::new("A") });
    }
    (t, trace)
}

fn base() -> ParameterMap {
    ParameterMap::new().with("a", 0.0).with("b", 7.0)
}

#[test]
fn best_point_maximizes_agreement_then_stays_close() {
    let (t, trace) = threshold();
    // x = 1, 2 should give B; x = 4 should not
    let labels = [label(0, "B", true), label(1, "B", true), label(3, "B", false)];
    let r = exhaustive_search(&t, &base(), &[Axis::linspace("a", 0.0, 5.0, 11)], &trace, &labels);
    assert_eq!(r.agreement, 3);
    assert_eq!(r.evaluated, 11);
    // a ∈ (2, 4] all agree; 2.5 is closest to a = 0
    assert_eq!(r.params.get("a"), Some(2.5));
    assert_eq!(r.params.get("b"), Some(7.0));
    assert!(!r.all_failed);
}

#[test]
fn ties_in_distance_go_to_the_first_point() {
    let (t, trace) = threshold();
    let labels = [label(0, "B", true)];
    let r = exhaustive_search(
        &t,
        &base(),
        &[Axis::linspace("a", 2.0, 3.0, 2), Axis { param: "b".into(), values: vec![6.0, 8.0] }],
        &trace,
        &labels,
    );
    assert_eq!(r.evaluated, 4);
    assert_eq!((r.params.get("a"), r.params.get("b")), (Some(2.0), Some(6.0)));
}

#[test]
fn single_point_grid_returns_that_point() {
    let (t, trace) = threshold();
    let r = exhaustive_search(&t, &base(), &[Axis::linspace("a", 9.0, 9.0, 1)], &trace, &[label(0, "B", true)]);
    assert_eq!(r.params.get("a"), Some(9.0));
    assert_eq!(r.evaluated, 1);
}

#[test]
fn all_failing_grid_is_flagged() {
    let (t, trace) = threshold();
    let r = exhaustive_search(&t, &base(), &[Axis::linspace("a", -3.0, 0.0, 4)], &trace, &[label(2, "B", true)]);
    assert_eq!(r.agreement, 0);
    assert!(r.all_failed);
    let r = exhaustive_search(&t, &base(), &[Axis { param: "a".into(), values: vec![] }], &trace, &[label(2, "B", true)]);
    assert_eq!((r.evaluated, r.params), (0, base()));
}

#[test]
fn first_divergence_is_where_the_nominal_machine_differs() {
    let t = corpus::attacker();
    let (nominal, failing) = (fixtures::attacker_nominal(), fixtures::attacker_baseline());
    let g = GridSpec::attacker();
    let (ep, c) = g
        .scenarios()
        .into_iter()
        .find_map(|(_, s)| divergence_correction(&t, &nominal, &failing, &s).unwrap())
        .unwrap();
    assert!(!ep.success);
    assert_eq!(c.kind, CorrectionKind::Immediate);
    assert_eq!(c.state.as_str(), "KICK");
    for e in &ep.trace.elements()[..c.t] {
        let a = eval_transition(&t, &e.state, &e.inputs, &e.vars, &nominal).unwrap();
        let b = eval_transition(&t, &e.state, &e.inputs, &e.vars, &failing).unwrap();
        assert_eq!(a, b, "earlier divergence at {}", e.t);
    }
    // no divergence against itself
    assert_eq!(first_divergence(&t, &failing, &failing, &ep.trace).unwrap(), None);
}

#[test]
fn successful_runs_give_no_correction() {
    let t = corpus::attacker();
    let p = fixtures::attacker_nominal();
    let g = GridSpec::attacker();
    let wins = g
        .scenarios()
        .into_iter()
        .take(20)
        .filter(|(_, s)| rsm_sim::run_episode(&t, &p, s).unwrap().success)
        .count();
    assert!(wins > 0);
    for (_, s) in g.scenarios().into_iter().take(20) {
        if rsm_sim::run_episode(&t, &p, &s).unwrap().success {
            assert!(divergence_correction(&t, &fixtures::attacker_baseline(), &p, &s).unwrap().is_none());
        }
    }
}
