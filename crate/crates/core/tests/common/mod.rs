#![allow(dead_code)]

pub mod gen;

use std::f64::consts::PI;

use rsm_core::corrections::{self, Correction};
use rsm_core::lang::parse_transition_named;
use rsm_core::trace::{Trace, TraceElement};
use rsm_core::{Bindings, Label, ParameterMap, TransitionFn, Value};

pub const ATTACKER_SIMPLE: &str = include_str!("../../../sim/rsm/attacker_simple.rsm");

pub fn attacker() -> TransitionFn {
    parse_transition_named("attacker_simple", ATTACKER_SIMPLE).unwrap()
}

pub fn example_params() -> ParameterMap {
    ParameterMap::new()
        .with("aimMargin", PI / 50.0)
        .with("maxDist", 80.0)
        .with("viewAng", PI / 6.0)
        .with("kickTimeout", 2.0)
}

fn bindings(xs: &[(&str, Value)]) -> Bindings {
    xs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// τ₅ of the running example, at index `t`.
pub fn tau5(t: usize) -> TraceElement {
    TraceElement {
        t,
        inputs: bindings(&[
            ("ballLoc", Value::Vec2([30.0, 40.0])),
            ("robotLoc", Value::Vec2([0.0, 0.0])),
            ("robotAng", Value::Real(0.0)),
            ("targetAng", Value::Real(PI / 60.0)),
            ("time", Value::Real(5.0)),
        ]),
        vars: bindings(&[("lastKick", Value::Real(2.0)), ("timeInKick", Value::Real(0.0))]),
        state: Label::new("GOTO"),
    }
}

/// A six-element trace ending in τ₅: the robot drives toward the ball.
pub fn example_trace() -> Trace {
    let t = attacker();
    let mut trace = Trace::for_transition(&t);
    for i in 0..5 {
        let mut e = tau5(i);
        e.inputs.insert("time".into(), Value::Real(i as f64));
        e.inputs.insert("robotLoc".into(), Value::Vec2([-(5 - i as i32) as f64, -(5 - i as i32) as f64]));
        e.state = Label::new(if i == 0 { "START" } else { "GOTO" });
        trace.record_step(&t, e.inputs, e.vars, e.state).unwrap();
    }
    let e = tau5(5);
    trace.record_step(&t, e.inputs, e.vars, e.state).unwrap();
    trace
}

/// c₅: the transition at τ₅ should have gone to KICK.
pub fn c5() -> Correction {
    corrections::immediate(&attacker(), &example_trace(), 5, "KICK", None).unwrap()
}
