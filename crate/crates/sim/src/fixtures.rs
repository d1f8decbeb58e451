//! Frozen parameter sets and scripted stop rules shared by tests, the CLI and
//! the service.

use std::fmt;
use std::str::FromStr;

use rsm_core::trace::{Trace, TraceElement};
use rsm_core::ParameterMap;

use crate::attacker::{kick_geometry, STAGE};
use crate::docker;

fn pm(kv: &[(&str, f64)]) -> ParameterMap {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Tuned attacker: ≥ 0.9 on the default grid.
pub fn attacker_nominal() -> ParameterMap {
    pm(&[
        ("aimMargin", 0.05),
        ("maxDist", 0.15),
        ("viewAng", 0.1),
        ("kickTimeout", 0.5),
        ("interceptSpeed", 0.3),
        ("catchSpeed", 0.5),
        ("catchDist", 0.5),
    ])
}

/// `maxDist` too small: the robot waits behind the ball and rarely kicks.
pub fn attacker_baseline() -> ParameterMap {
    attacker_nominal().with("maxDist", 0.12)
}

/// `maxDist` too large: kicks fire before the ball is centred on the kicker.
pub fn attacker_premature() -> ParameterMap {
    attacker_nominal().with("maxDist", 0.3)
}

pub fn simple_nominal() -> ParameterMap {
    pm(&[("aimMargin", 0.05), ("maxDist", 0.15), ("viewAng", 0.1), ("kickTimeout", 0.5)])
}

/// Starting point for the exhaustive-search comparison.
pub fn simple_initial() -> ParameterMap {
    simple_nominal().with("maxDist", 0.11)
}

pub fn docker_nominal() -> ParameterMap {
    pm(&[
        ("dockDist", 0.03),
        ("headingTol", 0.07),
        ("lineupDist", 0.05),
        ("driveTol", 0.3),
        ("turnTol", 0.1),
        ("dockDriveTol", 0.2),
        ("dockTurnTol", 0.03),
    ])
}

/// Three thresholds inside the controllers' dead bands: never docks.
pub fn docker_baseline() -> ParameterMap {
    docker_nominal()
        .with("lineupDist", 0.01)
        .with("dockTurnTol", 0.004)
        .with("dockDist", 0.005)
}

/// Distance from the ball to the spot right in front of the kicker.
pub fn kick_ready_distance(e: &TraceElement) -> Option<f64> {
    let (d, lat, _) = kick_geometry(&e.inputs)?;
    Some((d - STAGE).hypot(lat))
}

/// Step of the first transition into `state`: the element whose output is it.
pub fn first_transition(trace: &Trace, state: &str) -> Option<usize> {
    trace
        .elements()
        .windows(2)
        .find(|w| w[0].state.as_str() != state && w[1].state.as_str() == state)
        .map(|w| w[0].t)
}

/// Scripted stand-in for the user watching a continue fork.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    /// Ball within this distance of the kicking spot.
    KickReady(f64),
    /// Robot–ball distance below this.
    BallDist(f64),
    /// Docked within the charger tolerances.
    Docked,
    /// Simulated time above this.
    Time(f64),
    /// Fork has reached this timestep.
    Step(usize),
}

pub const KICK_READY: StopRule = StopRule::KickReady(0.005);

impl StopRule {
    pub fn matches(&self, e: &TraceElement) -> bool {
        let real = |k: &str| e.inputs.get(k).and_then(|v| v.as_real());
        match *self {
            StopRule::KickReady(r) => kick_ready_distance(e).is_some_and(|d| d < r),
            StopRule::BallDist(r) => kick_geometry(&e.inputs).is_some_and(|(d, _, _)| d < r),
            StopRule::Docked => match (real("dockErr"), real("headingErr")) {
                (Some(d), Some(h)) => d < docker::POS_TOL && h.abs() < docker::ANG_TOL,
                _ => false,
            },
            StopRule::Time(s) => real("time").is_some_and(|t| t > s),
            StopRule::Step(n) => e.t >= n,
        }
    }
}

impl fmt::Display for StopRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopRule::KickReady(r) => write!(f, "kick-ready<{r}"),
            StopRule::BallDist(r) => write!(f, "ball-dist<{r}"),
            StopRule::Docked => f.write_str("docked"),
            StopRule::Time(s) => write!(f, "time>{s}"),
            StopRule::Step(n) => write!(f, "step>={n}"),
        }
    }
}

impl FromStr for StopRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("stop rule `{s}`: {e}"));
        let s = s.trim();
        if s == "docked" {
            return Ok(StopRule::Docked);
        }
        if let Some(v) = s.strip_prefix("kick-ready<") {
            return Ok(StopRule::KickReady(num(v)?));
        }
        if let Some(v) = s.strip_prefix("ball-dist<") {
            return Ok(StopRule::BallDist(num(v)?));
        }
        if let Some(v) = s.strip_prefix("time>") {
            return Ok(StopRule::Time(num(v)?));
        }
        if let Some(v) = s.strip_prefix("step>=") {
            return v.trim().parse().map(StopRule::Step).map_err(|e| format!("stop rule `{s}`: {e}"));
        }
        Err(format!(
            "unknown stop rule `{s}` (kick-ready<R | ball-dist<R | docked | time>S | step>=N)"
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_rules_round_trip() {
        for s in ["kick-ready<0.005", "ball-dist<0.2", "docked", "time>1.5", "step>=40"] {
            assert_eq!(s.parse::<StopRule>().unwrap().to_string(), s);
        }
        assert!("sometime".parse::<StopRule>().is_err());
        assert!("time>x".parse::<StopRule>().is_err());
    }

    #[test]
    fn fixtures_differ_only_where_intended() {
        let n = attacker_nominal();
        let b = attacker_baseline();
        let diff: Vec<_> = n.iter().filter(|(k, v)| b.get(k) != Some(*v)).map(|(k, _)| k).collect();
        assert_eq!(diff, ["maxDist"]);
        assert_eq!(docker_baseline().0.len(), docker_nominal().0.len());
    }
}
