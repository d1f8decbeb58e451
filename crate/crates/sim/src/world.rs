//! Field geometry and kinematics shared by the behaviours.
//!
//! Units are metres, seconds and radians. The field is centred on the origin
//! with the opponent goal on the `+x` edge.

use serde::{Deserialize, Serialize};

use crate::geom::{v2, wrap, V2};

pub const DT: f64 = 1.0 / 60.0;
pub const BALL_DECEL: f64 = 0.3;
pub const MAX_SPEED: f64 = 2.0;
pub const MAX_TURN: f64 = 4.0;
pub const HALF_LENGTH: f64 = 4.5;
pub const HALF_WIDTH: f64 = 3.0;
pub const GOAL_HALF_WIDTH: f64 = 0.5;
pub const ROBOT_RADIUS: f64 = 0.09;
pub const BALL_RADIUS: f64 = 0.0215;

pub const GOAL: V2 = v2(HALF_LENGTH, 0.0);

/// Complete simulator state. The robot is velocity-commanded with no inertia,
/// so `robot_vel` is the last command and never needed to resume a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ball: V2,
    pub ball_vel: V2,
    pub robot: V2,
    pub heading: f64,
    #[serde(default)]
    pub robot_vel: V2,
    #[serde(default)]
    pub time: f64,
}

/// A velocity command in world coordinates plus a turn rate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Command {
    pub vel: V2,
    pub turn: f64,
}

impl Command {
    pub const STOP: Command = Command { vel: V2::ZERO, turn: 0.0 };
}

/// Where the ball went during a tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BallEvent {
    None,
    Goal,
    Out,
}

pub fn heading_vec(a: f64) -> V2 {
    V2::polar(1.0, a)
}

/// Rolls the ball for `dt` under constant friction deceleration. The
/// direction of travel never changes.
pub fn roll(pos: V2, vel: V2, dt: f64) -> (V2, V2) {
    let s = vel.norm();
    if s == 0.0 {
        return (pos, vel);
    }
    let dir = vel * (1.0 / s);
    let stop = s / BALL_DECEL;
    if stop <= dt {
        (pos + dir * (s * stop * 0.5), V2::ZERO)
    } else {
        let s1 = s - BALL_DECEL * dt;
        (pos + dir * ((s + s1) * 0.5 * dt), dir * s1)
    }
}

/// Ball position after `t` seconds of free rolling.
pub fn predict(pos: V2, vel: V2, t: f64) -> V2 {
    roll(pos, vel, t).0
}

/// Classifies the segment `a → b` against the field boundary.
pub fn boundary(a: V2, b: V2) -> BallEvent {
    if b.x >= HALF_LENGTH {
        let y = if b.x != a.x {
            a.y + (b.y - a.y) * (HALF_LENGTH - a.x) / (b.x - a.x)
        } else {
            b.y
        };
        return if y.abs() < GOAL_HALF_WIDTH { BallEvent::Goal } else { BallEvent::Out };
    }
    if b.x <= -HALF_LENGTH || b.y.abs() >= HALF_WIDTH {
        return BallEvent::Out;
    }
    BallEvent::None
}

impl WorldState {
    /// Applies a robot command for one tick (turn rate and speed clamped).
    pub fn move_robot(&mut self, cmd: Command) {
        let turn = cmd.turn.clamp(-MAX_TURN, MAX_TURN);
        let vel = cmd.vel.clamp(MAX_SPEED);
        self.heading = wrap(self.heading + turn * DT);
        self.robot += vel * DT;
        self.robot_vel = vel;
    }

    /// Rolls the ball one tick and reports a goal or exit.
    pub fn move_ball(&mut self) -> BallEvent {
        let before = self.ball;
        let (p, v) = roll(self.ball, self.ball_vel, DT);
        self.ball = p;
        self.ball_vel = v;
        boundary(before, p)
    }

    /// Ball position in the robot frame (x forward, y left).
    pub fn ball_local(&self) -> V2 {
        let rel = self.ball - self.robot;
        let h = heading_vec(self.heading);
        v2(rel.dot(h), rel.dot(h.perp()))
    }

    /// Separates overlapping robot and ball, bouncing the ball off the robot.
    pub fn collide(&mut self) {
        const RESTITUTION: f64 = 0.3;
        let rel = self.ball - self.robot;
        let d = rel.norm();
        let min = ROBOT_RADIUS + BALL_RADIUS;
        if d >= min {
            return;
        }
        let n = if d > 0.0 { rel * (1.0 / d) } else { heading_vec(self.heading) };
        self.ball = self.robot + n * min;
        let vn = (self.ball_vel - self.robot_vel).dot(n);
        if vn < 0.0 {
            self.ball_vel = self.ball_vel - n * ((1.0 + RESTITUTION) * vn);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_stops_after_v_squared_over_two_a() {
        let (mut p, mut v) = (V2::ZERO, v2(0.6, 0.0));
        for _ in 0..1000 {
            (p, v) = roll(p, v, DT);
        }
        assert_eq!(v, V2::ZERO);
        // 0.36 / 0.6
        assert!((p.x - 0.6).abs() < 1e-9, "{}", p.x);
    }

    #[test]
    fn boundary_interpolates_the_goal_line() {
        assert_eq!(boundary(v2(4.4, 0.4), v2(4.6, 0.4)), BallEvent::Goal);
        assert_eq!(boundary(v2(4.4, 0.45), v2(4.6, 0.6)), BallEvent::Out);
        assert_eq!(boundary(v2(4.4, 0.55), v2(4.6, 0.35)), BallEvent::Goal);
        assert_eq!(boundary(v2(0.0, 2.9), v2(0.0, 3.0)), BallEvent::Out);
        assert_eq!(boundary(v2(0.0, 0.0), v2(0.1, 0.0)), BallEvent::None);
    }

    #[test]
    fn robot_speed_is_clamped() {
        let mut w = WorldState::default();
        w.move_robot(Command { vel: v2(10.0, 0.0), turn: 100.0 });
        assert!((w.robot.x - MAX_SPEED * DT).abs() < 1e-12);
        assert!((w.heading - MAX_TURN * DT).abs() < 1e-12);
    }
}
