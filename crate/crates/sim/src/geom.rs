//! Plane vectors.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct V2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for V2 {
    fn from([x, y]: [f64; 2]) -> Self {
        V2 { x, y }
    }
}

impl From<V2> for [f64; 2] {
    fn from(v: V2) -> Self {
        [v.x, v.y]
    }
}

pub const fn v2(x: f64, y: f64) -> V2 {
    V2 { x, y }
}

impl V2 {
    pub const ZERO: V2 = v2(0.0, 0.0);

    pub fn polar(r: f64, a: f64) -> V2 {
        v2(r * a.cos(), r * a.sin())
    }

    pub fn dot(self, o: V2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Unit vector, or zero for the zero vector.
    pub fn unit(self) -> V2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            V2::ZERO
        }
    }

    /// Rotated +90°.
    pub fn perp(self) -> V2 {
        v2(-self.y, self.x)
    }

    /// Scaled down to at most `max` length.
    pub fn clamp(self, max: f64) -> V2 {
        let n = self.norm();
        if n > max {
            self * (max / n)
        } else {
            self
        }
    }
}

impl Add for V2 {
    type Output = V2;
    fn add(self, o: V2) -> V2 {
        v2(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for V2 {
    fn add_assign(&mut self, o: V2) {
        *self = *self + o;
    }
}

impl Sub for V2 {
    type Output = V2;
    fn sub(self, o: V2) -> V2 {
        v2(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for V2 {
    type Output = V2;
    fn mul(self, k: f64) -> V2 {
        v2(self.x * k, self.y * k)
    }
}

impl Neg for V2 {
    type Output = V2;
    fn neg(self) -> V2 {
        v2(-self.x, -self.y)
    }
}

/// Wraps into `(-π, π]`.
pub fn wrap(a: f64) -> f64 {
    rsm_core::lang::angle_mod(a).unwrap_or(0.0)
}
