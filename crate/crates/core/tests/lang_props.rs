mod common;

use std::f64::consts::PI;

use common::gen;
use proptest::prelude::*;
use rsm_core::lang::{angle_mod, parse_transition, render_transition};
use rsm_core::{eval_transition, Label};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn interpreter_is_total_and_deterministic(seed in any::<u64>()) {
        let mut r = gen::rng(seed);
        let t = gen::program(&mut r);
        let e = gen::element(&mut r, &t, 0);
        let p = gen::params(&mut r, &t);
        let first = eval_transition(&t, &e.state, &e.inputs, &e.vars, &p);
        // only angle_mod of a non-finite value can fail at run time
        if let Ok(l) = &first {
            prop_assert!(t.has_state(l.as_str()));
        }
        for _ in 0..3 {
            prop_assert_eq!(&eval_transition(&t, &e.state, &e.inputs, &e.vars, &p), &first);
        }
    }

    #[test]
    fn printed_programs_reparse_to_the_same_behaviour(seed in any::<u64>()) {
        let mut r = gen::rng(seed);
        let t = gen::program(&mut r);
        let text = render_transition(&t);
        let back = parse_transition(&text).unwrap();
        prop_assert_eq!(render_transition(&back), text);
        for _ in 0..4 {
            let e = gen::element(&mut r, &t, 0);
            let p = gen::params(&mut r, &t);
            prop_assert_eq!(
                eval_transition(&t, &e.state, &e.inputs, &e.vars, &p),
                eval_transition(&back, &e.state, &e.inputs, &e.vars, &p)
            );
        }
    }

    #[test]
    fn angle_mod_is_idempotent(a in -1e6f64..1e6) {
        let once = angle_mod(a).unwrap();
        prop_assert!(once > -PI && once <= PI);
        prop_assert_eq!(angle_mod(once).unwrap().to_bits(), once.to_bits());
    }
}

#[test]
fn angle_mod_examples() {
    assert_eq!(angle_mod(PI / 60.0).unwrap(), PI / 60.0);
    assert!(angle_mod(2.0 * PI).unwrap().abs() < 1e-15);
    assert!((angle_mod(-1.5 * PI).unwrap() - PI / 2.0).abs() < 1e-15);
    assert!(angle_mod(f64::NAN).is_err());
    assert!(angle_mod(f64::INFINITY).is_err());
}

#[test]
fn running_example_parses() {
    let t = common::attacker();
    let states: Vec<&str> = t.states.iter().map(Label::as_str).collect();
    assert_eq!(states, ["START", "GOTO", "KICK", "END"]);
    assert_eq!(t.params, ["aimMargin", "maxDist", "viewAng", "kickTimeout"]);
    assert_eq!(t.start_state().as_str(), "START");
    assert_eq!(t.end_state().as_str(), "END");
}

#[test]
fn running_example_evaluates() {
    let t = common::attacker();
    let e = common::tau5(5);
    let p = common::example_params();
    let out = |p| eval_transition(&t, &e.state, &e.inputs, &e.vars, p).unwrap();
    assert_eq!(out(&p).as_str(), "GOTO");
    assert_eq!(out(&p.clone().with("maxDist", 80.5)).as_str(), "KICK");
    let start = Label::new("START");
    for p in [p.clone(), p.clone().with("maxDist", -1.0)] {
        assert_eq!(eval_transition(&t, &start, &e.inputs, &e.vars, &p).unwrap().as_str(), "GOTO");
    }
}

#[test]
fn generator_covers_the_language() {
    let mut total = std::collections::BTreeMap::new();
    let mut r = gen::rng(7);
    for _ in 0..300 {
        for (k, v) in gen::census(&gen::program(&mut r)) {
            *total.entry(k).or_insert(0) += v;
        }
    }
    for k in [
        "+", "-", "*", "/", "<", "<=", ">", ">=", "==", "!=", "&&", "||", "!", "sin", "cos", "abs", "sqrt",
        "norm", "dot", "angle_mod", "vec2", "local", "state", "let", "if", "return",
    ] {
        assert!(total.get(k).copied().unwrap_or(0) > 0, "generator never produced `{k}`");
    }
}
