//! Docking behaviour: a differential-drive robot drives to a line-up point in
//! front of the charger, turns to face it and drives in.
//!
//! Stage 1 states steer to the line-up point, stage 2 states to the dock.
//! Turning and driving controllers stop inside small dead bands, so a
//! transition threshold tighter than the dead band never fires.

use rsm_core::{Bindings, Shape, Value};

use crate::geom::{v2, wrap, V2};
use crate::world::{heading_vec, Command, WorldState};

/// Charger position; the docked heading is 0 (facing `+x`).
pub const DOCK: V2 = v2(0.0, 0.0);
pub const LINEUP: V2 = v2(-0.6, 0.0);
pub const POS_TOL: f64 = 0.05;
pub const ANG_TOL: f64 = 5.0 * std::f64::consts::PI / 180.0;

pub const LINEUP_DEADBAND: f64 = 0.02;
pub const DOCK_DEADBAND: f64 = 0.01;
pub const TURN_DEADBAND: f64 = 0.01;
const MIN_TURN: f64 = 0.3;

pub const STATES: &[&str] = &[
    "START",
    "S1_FORWARD",
    "S1_LEFT",
    "S1_RIGHT",
    "S2_FORWARD",
    "S2_LEFT",
    "S2_RIGHT",
    "END",
];

pub const INPUTS: &[(&str, Shape)] = &[
    ("robotLoc", Shape::Vec2),
    ("robotAng", Shape::Real),
    ("lineupErr", Shape::Real),
    ("lineupBearing", Shape::Real),
    ("dockErr", Shape::Real),
    ("dockBearing", Shape::Real),
    ("headingErr", Shape::Real),
    ("time", Shape::Real),
];

pub const VARS: &[(&str, Shape)] = &[];

fn bearing(w: &WorldState, to: V2) -> f64 {
    let d = to - w.robot;
    if d.norm() == 0.0 {
        0.0
    } else {
        wrap(d.angle() - w.heading)
    }
}

pub fn observe(w: &WorldState) -> (Bindings, Bindings) {
    let inputs = Bindings::from([
        ("robotLoc".to_string(), Value::Vec2([w.robot.x, w.robot.y])),
        ("robotAng".to_string(), Value::Real(w.heading)),
        ("lineupErr".to_string(), Value::Real((LINEUP - w.robot).norm())),
        ("lineupBearing".to_string(), Value::Real(bearing(w, LINEUP))),
        ("dockErr".to_string(), Value::Real((DOCK - w.robot).norm())),
        ("dockBearing".to_string(), Value::Real(bearing(w, DOCK))),
        ("headingErr".to_string(), Value::Real(wrap(-w.heading))),
        ("time".to_string(), Value::Real(w.time)),
    ]);
    (inputs, Bindings::new())
}

fn turn_toward(b: f64, left: bool) -> f64 {
    let b = if left { b } else { -b };
    let rate = if b > TURN_DEADBAND { (3.0 * b).clamp(MIN_TURN, 2.0) } else { 0.0 };
    if left {
        rate
    } else {
        -rate
    }
}

fn drive(w: &WorldState, to: V2, deadband: f64, max: f64) -> Command {
    let d = (to - w.robot).norm();
    if d <= deadband {
        return Command::STOP;
    }
    let speed = (1.0 * d).min(max);
    Command {
        vel: heading_vec(w.heading) * speed,
        turn: 2.0 * bearing(w, to),
    }
}

pub fn control(state: &str, w: &WorldState) -> Command {
    let spin = |b: f64, left: bool| Command {
        vel: V2::ZERO,
        turn: turn_toward(b, left),
    };
    match state {
        "S1_FORWARD" => drive(w, LINEUP, LINEUP_DEADBAND, 0.5),
        "S1_LEFT" => spin(bearing(w, LINEUP), true),
        "S1_RIGHT" => spin(bearing(w, LINEUP), false),
        "S2_FORWARD" => drive(w, DOCK, DOCK_DEADBAND, 0.3),
        "S2_LEFT" => spin(bearing(w, DOCK), true),
        "S2_RIGHT" => spin(bearing(w, DOCK), false),
        _ => Command::STOP,
    }
}

pub fn docked(w: &WorldState) -> bool {
    (DOCK - w.robot).norm() < POS_TOL && wrap(-w.heading).abs() < ANG_TOL
}

/// Robot pose recovered from the dock-relative channels, for machines that do
/// not record the absolute pose.
pub fn pose_from_errors(inputs: &Bindings) -> Option<(V2, f64)> {
    let r = |k: &str| inputs.get(k).and_then(Value::as_real);
    let heading = -r("headingErr")?;
    let d = r("dockErr")?;
    Some((DOCK - heading_vec(heading + r("dockBearing")?) * d, heading))
}

pub fn reconstruct(inputs: &Bindings) -> Result<WorldState, String> {
    let robot = inputs
        .get("robotLoc")
        .and_then(Value::as_vec2)
        .ok_or("missing input channel `robotLoc`")?;
    let r = |k: &str| -> Result<f64, String> {
        inputs
            .get(k)
            .and_then(Value::as_real)
            .ok_or_else(|| format!("missing input channel `{k}`"))
    };
    Ok(WorldState {
        robot: robot.into(),
        heading: r("robotAng")?,
        time: r("time")?,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_is_recovered_from_relative_channels() {
        for (x, y, a) in [(-1.0, 0.4, 0.3), (-0.2, -0.7, -2.5), (0.0, 0.0, 0.0), (0.5, 0.1, 3.0)] {
            let w = WorldState { robot: v2(x, y), heading: a, ..Default::default() };
            let (inputs, _) = observe(&w);
            let (p, h) = pose_from_errors(&inputs).unwrap();
            assert!((p - w.robot).norm() < 1e-12, "{p:?}");
            assert!(wrap(h - a).abs() < 1e-12);
        }
    }

    #[test]
    fn turning_stops_inside_the_dead_band() {
        assert_eq!(turn_toward(0.005, true), 0.0);
        assert_eq!(turn_toward(0.5, false), 0.0);
        assert!(turn_toward(0.02, true) >= MIN_TURN);
        assert!(turn_toward(-0.02, false) <= -MIN_TURN);
    }

    #[test]
    fn docked_pose() {
        assert!(docked(&WorldState::default()));
        let w = WorldState { heading: 0.1, ..Default::default() };
        assert!(!docked(&w));
    }
}
