//! Planar rigid-body poses.

use serde::{Deserialize, Serialize};

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// SE(2) pose: translation (x, y) and heading theta in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Se2 {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Se2 { x, y, theta }
    }

    pub const fn identity() -> Self {
        Se2::new(0.0, 0.0, 0.0)
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Se2::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn translation(self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Group composition `self ∘ other` (apply `other` in `self`'s frame).
    pub fn compose(self, other: Se2) -> Se2 {
        let (s, c) = self.theta.sin_cos();
        Se2 {
            x: self.x + c * other.x - s * other.y,
            y: self.y + s * other.x + c * other.y,
            theta: wrap_angle(self.theta + other.theta),
        }
    }

    pub fn inverse(self) -> Se2 {
        let (s, c) = self.theta.sin_cos();
        Se2 {
            x: -(c * self.x + s * self.y),
            y: s * self.x - c * self.y,
            theta: wrap_angle(-self.theta),
        }
    }

    /// Relative pose `self⁻¹ ∘ other`.
    pub fn between(self, other: Se2) -> Se2 {
        self.inverse().compose(other)
    }

    /// Map a point from this pose's frame into the parent frame.
    pub fn transform(self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [
            self.x + c * p[0] - s * p[1],
            self.y + s * p[0] + c * p[1],
        ]
    }

    /// Rotate a vector by this pose's heading (no translation).
    pub fn rotate(self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn translation_distance(self, other: Se2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}
