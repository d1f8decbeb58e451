//! Ball-striking behaviour: approach the ball from behind, line up with the
//! goal and kick.
//!
//! The robot is holonomic. Controllers are proportional laws keyed by state
//! name; `CATCH` traps a ball rolling toward the robot, `INTERCEPT` chases a
//! ball rolling away using a longer prediction horizon.

use rsm_core::{Bindings, Shape, Value};

use crate::geom::{wrap, V2};
use crate::world::{heading_vec, predict, Command, WorldState, BALL_RADIUS, DT, GOAL, ROBOT_RADIUS};

pub const KICK_SPEED: f64 = 4.0;
/// Forward speed (relative to the ball) while committing to a kick.
pub const KICK_APPROACH: f64 = 0.8;
/// Kicker contact window in the robot frame.
pub const KICKER_DEPTH: f64 = 0.05;
pub const KICKER_HALF_WIDTH: f64 = 0.05;
/// Kick direction error (rad) for contact at the edge of the kicker.
pub const DEFLECTION: f64 = 0.2;
/// Where the robot waits behind the ball, centre to centre.
pub const STAGE: f64 = 0.14;

const K_POS: f64 = 4.0;
const K_ANG: f64 = 6.0;

pub const STATES: &[&str] = &["START", "GOTO", "INTERCEPT", "CATCH", "KICK", "END"];

pub const INPUTS: &[(&str, Shape)] = &[
    ("ballLoc", Shape::Vec2),
    ("ballVel", Shape::Vec2),
    ("robotLoc", Shape::Vec2),
    ("robotAng", Shape::Real),
    ("targetAng", Shape::Real),
    ("time", Shape::Real),
];

pub const VARS: &[(&str, Shape)] = &[("lastKick", Shape::Real), ("timeInKick", Shape::Real)];

/// Emission-side memory, exposed to the transition function as variables.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mem {
    pub last_kick: f64,
    pub time_in_kick: f64,
}

fn vec2(v: V2) -> Value {
    Value::Vec2([v.x, v.y])
}

/// Heading from the ball to the goal centre: the direction a kick should go.
pub fn target_angle(w: &WorldState) -> f64 {
    (GOAL - w.ball).angle()
}

pub fn observe(w: &WorldState, mem: &Mem) -> (Bindings, Bindings) {
    let inputs = Bindings::from([
        ("ballLoc".to_string(), vec2(w.ball)),
        ("ballVel".to_string(), vec2(w.ball_vel)),
        ("robotLoc".to_string(), vec2(w.robot)),
        ("robotAng".to_string(), Value::Real(w.heading)),
        ("targetAng".to_string(), Value::Real(target_angle(w))),
        ("time".to_string(), Value::Real(w.time)),
    ]);
    let vars = Bindings::from([
        ("lastKick".to_string(), Value::Real(mem.last_kick)),
        ("timeInKick".to_string(), Value::Real(mem.time_in_kick)),
    ]);
    (inputs, vars)
}

/// Drives to a point `STAGE` behind the ball (predicted `lead` seconds ahead)
/// on the ball–goal line, going around the ball when approaching from the
/// wrong side.
fn stage(w: &WorldState, lead: f64) -> Command {
    let bp = predict(w.ball, w.ball_vel, lead);
    let u = (GOAL - bp).unit();
    let rel = w.robot - bp;
    let target = if rel.dot(u) > -0.5 * STAGE {
        let n = u.perp();
        let side = if rel.dot(n) >= 0.0 { 1.0 } else { -1.0 };
        bp - u * 0.3 + n * (0.3 * side)
    } else {
        bp - u * STAGE
    };
    Command {
        vel: w.ball_vel + (target - w.robot) * K_POS,
        turn: K_ANG * wrap(u.angle() - w.heading),
    }
}

pub fn control(state: &str, w: &WorldState) -> Command {
    match state {
        "GOTO" => stage(w, 0.0),
        "INTERCEPT" => {
            let d = (w.ball - w.robot).norm();
            stage(w, (d / 1.5).min(2.0))
        }
        "CATCH" => {
            // stand on the ball's path, facing it
            let dir = w.ball_vel.unit();
            let along = (w.robot - w.ball).dot(dir).max(0.0);
            let target = w.ball + dir * along;
            Command {
                vel: (target - w.robot) * K_POS,
                turn: K_ANG * wrap((w.ball - w.robot).angle() - w.heading),
            }
        }
        // commit: straight ahead relative to the ball, no re-aiming
        "KICK" => Command {
            vel: w.ball_vel + heading_vec(w.heading) * KICK_APPROACH,
            turn: 0.0,
        },
        _ => Command::STOP,
    }
}

/// Ball contact after both bodies moved. Returns true on a kick.
pub fn interact(state: &str, w: &mut WorldState, mem: &mut Mem) -> bool {
    let local = w.ball_local();
    let in_kicker = local.x >= ROBOT_RADIUS
        && local.x <= ROBOT_RADIUS + KICKER_DEPTH
        && local.y.abs() < KICKER_HALF_WIDTH;
    let mut kicked = false;
    if in_kicker {
        match state {
            "KICK" => {
                // off-centre contact deflects the ball
                let dir = w.heading + DEFLECTION * local.y / KICKER_HALF_WIDTH;
                w.ball_vel = heading_vec(dir) * KICK_SPEED;
                mem.last_kick = w.time;
                kicked = true;
            }
            "CATCH" => w.ball_vel = w.robot_vel,
            _ => {}
        }
    }
    if kicked {
        // keep the ball clear of the robot body without damping the kick
        let rel = w.ball - w.robot;
        let min = ROBOT_RADIUS + BALL_RADIUS;
        if rel.norm() < min {
            w.ball = w.robot + rel.unit() * min;
        }
    } else {
        w.collide();
    }
    kicked
}

/// Memory update for a tick spent in `next` after `cur`.
pub fn update_mem(cur: &str, next: &str, mem: &mut Mem) {
    mem.time_in_kick = match (cur, next) {
        ("KICK", "KICK") => mem.time_in_kick + DT,
        (_, "KICK") => DT,
        _ => 0.0,
    };
}

/// Distance to the ball, its lateral offset in the robot frame and the aim
/// error, read from recorded inputs.
pub fn kick_geometry(inputs: &Bindings) -> Option<(f64, f64, f64)> {
    let ball = V2::from(inputs.get("ballLoc")?.as_vec2()?);
    let robot = V2::from(inputs.get("robotLoc")?.as_vec2()?);
    let heading = inputs.get("robotAng")?.as_real()?;
    let target = inputs.get("targetAng")?.as_real()?;
    let rel = ball - robot;
    Some((rel.norm(), rel.dot(heading_vec(heading).perp()), wrap(target - heading)))
}

/// Rebuilds world and memory from channel values.
pub fn reconstruct(inputs: &Bindings, vars: &Bindings) -> Result<(WorldState, Mem), String> {
    let v = |k: &str| -> Result<V2, String> {
        inputs
            .get(k)
            .and_then(Value::as_vec2)
            .map(V2::from)
            .ok_or_else(|| format!("missing input channel `{k}`"))
    };
    let r = |k: &str| -> Result<f64, String> {
        inputs
            .get(k)
            .and_then(Value::as_real)
            .ok_or_else(|| format!("missing input channel `{k}`"))
    };
    let w = WorldState {
        ball: v("ballLoc")?,
        ball_vel: v("ballVel")?,
        robot: v("robotLoc")?,
        heading: r("robotAng")?,
        robot_vel: V2::ZERO,
        time: r("time")?,
    };
    let var = |k: &str| vars.get(k).and_then(Value::as_real).unwrap_or(0.0);
    Ok((
        w,
        Mem {
            last_kick: var("lastKick"),
            time_in_kick: var("timeInKick"),
        },
    ))
}
