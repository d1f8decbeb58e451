//! Transition functions shipped with the simulators.

use rsm_core::lang::parse_transition_named;
use rsm_core::TransitionFn;

pub const ATTACKER: &str = include_str!("../rsm/attacker.rsm");
pub const ATTACKER_SIMPLE: &str = include_str!("../rsm/attacker_simple.rsm");
pub const DOCKER: &str = include_str!("../rsm/docker.rsm");
pub const DEFLECTOR: &str = include_str!("../rsm/deflector.rsm");
pub const PASSING: &str = include_str!("../rsm/passing.rsm");

pub const ALL: &[(&str, &str)] = &[
    ("attacker", ATTACKER),
    ("attacker_simple", ATTACKER_SIMPLE),
    ("docker", DOCKER),
    ("deflector", DEFLECTOR),
    ("passing", PASSING),
];

/// Parses a corpus entry by name.
pub fn load(name: &str) -> Option<TransitionFn> {
    let (n, src) = ALL.iter().find(|(n, _)| *n == name)?;
    Some(parse_transition_named(n, src).expect("corpus entries parse"))
}

pub fn attacker() -> TransitionFn {
    load("attacker").unwrap()
}

pub fn attacker_simple() -> TransitionFn {
    load("attacker_simple").unwrap()
}

pub fn docker() -> TransitionFn {
    load("docker").unwrap()
}
