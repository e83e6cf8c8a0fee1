//! Small 2D vector/tensor arithmetic used throughout the solver.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// A 2D vector (also used for points and face area vectors).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    /// Unit vector in the same direction. Zero vectors are returned unchanged.
    pub fn unit(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            self
        }
    }

    /// Counterclockwise perpendicular `(-y, x)`.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// 2D cross product `self.x * other.y - self.y * other.x`.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
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

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
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

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A 2x2 tensor, row-major; `row(i)` is the gradient of component `i`
/// when used as a velocity gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tensor2 {
    pub xx: f64,
    pub xy: f64,
    pub yx: f64,
    pub yy: f64,
}

impl Tensor2 {
    pub const ZERO: Tensor2 = Tensor2 { xx: 0.0, xy: 0.0, yx: 0.0, yy: 0.0 };

    pub fn from_rows(rx: Vec2, ry: Vec2) -> Self {
        Tensor2 { xx: rx.x, xy: rx.y, yx: ry.x, yy: ry.y }
    }

    /// Outer product `a ⊗ b` (entry ij = a_i b_j).
    pub fn outer(a: Vec2, b: Vec2) -> Self {
        Tensor2 { xx: a.x * b.x, xy: a.x * b.y, yx: a.y * b.x, yy: a.y * b.y }
    }

    pub fn transpose(self) -> Self {
        Tensor2 { xx: self.xx, xy: self.yx, yx: self.xy, yy: self.yy }
    }

    /// Matrix-vector product.
    pub fn dot(self, v: Vec2) -> Vec2 {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.yx * v.x + self.yy * v.y)
    }
}

impl Add for Tensor2 {
    type Output = Tensor2;
    fn add(self, o: Tensor2) -> Tensor2 {
        Tensor2 { xx: self.xx + o.xx, xy: self.xy + o.xy, yx: self.yx + o.yx, yy: self.yy + o.yy }
    }
}

impl Sub for Tensor2 {
    type Output = Tensor2;
    fn sub(self, o: Tensor2) -> Tensor2 {
        Tensor2 { xx: self.xx - o.xx, xy: self.xy - o.xy, yx: self.yx - o.yx, yy: self.yy - o.yy }
    }
}

impl Mul<f64> for Tensor2 {
    type Output = Tensor2;
    fn mul(self, s: f64) -> Tensor2 {
        Tensor2 { xx: self.xx * s, xy: self.xy * s, yx: self.yx * s, yy: self.yy * s }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec2_basics() {
        let a = Vec2::new(3.0, 4.0);
        assert_eq!(a.norm(), 5.0);
        assert_eq!(a.dot(Vec2::new(1.0, 2.0)), 11.0);
        assert_eq!(a.perp(), Vec2::new(-4.0, 3.0));
        assert_eq!(Vec2::new(1.0, 0.0).cross(Vec2::new(0.0, 1.0)), 1.0);
    }

    #[test]
    fn tensor_transpose_and_symmetric_part() {
        let g = Tensor2 { xx: 1.0, xy: 2.0, yx: 3.0, yy: 4.0 };
        let s = g + g.transpose();
        assert_eq!(s.xy, s.yx);
        assert_eq!(g.dot(Vec2::new(1.0, 1.0)), Vec2::new(3.0, 7.0));
    }
}
