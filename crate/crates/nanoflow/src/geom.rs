//! Minimal fixed-size linear algebra for 2D geometry.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// 2D vector with `f64` components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Component access by index (0 = x, 1 = y).
    pub fn comp(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => panic!("component index {i} out of range"),
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

/// Row-major 2x2 matrix. For a velocity gradient, `m[c][j]` holds the
/// derivative of component `c` along direction `j`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn row(self, c: usize) -> Vec2 {
        Vec2::new(self.0[c][0], self.0[c][1])
    }

    pub fn transpose(self) -> Mat2 {
        Mat2([
            [self.0[0][0], self.0[1][0]],
            [self.0[0][1], self.0[1][1]],
        ])
    }

    pub fn det(self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.0[0][0] * v.x + self.0[0][1] * v.y,
            self.0[1][0] * v.x + self.0[1][1] * v.y,
        )
    }

    /// Symmetrized gradient `M + M^T`.
    pub fn sym(self) -> Mat2 {
        Mat2([
            [2.0 * self.0[0][0], self.0[0][1] + self.0[1][0]],
            [self.0[0][1] + self.0[1][0], 2.0 * self.0[1][1]],
        ])
    }

    pub fn trace(self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2([
            [self.0[0][0] + o.0[0][0], self.0[0][1] + o.0[0][1]],
            [self.0[1][0] + o.0[1][0], self.0[1][1] + o.0[1][1]],
        ])
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        Mat2([
            [self.0[0][0] * s, self.0[0][1] * s],
            [self.0[1][0] * s, self.0[1][1] * s],
        ])
    }
}
