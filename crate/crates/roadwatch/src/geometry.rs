//! Planar geometry primitives shared by the scenario, world and planner.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// A point or displacement in the plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Unit vector in the same direction; zero stays zero.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            Vec2::new(self.x / n, self.y / n)
        } else {
            Vec2::ZERO
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Euclidean distance between two points.
pub fn dist(p: Vec2, q: Vec2) -> f64 {
    (p - q).norm()
}

/// Axis-aligned workspace rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Rect { min, max }
    }

    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        p.x >= self.min.x - tol
            && p.x <= self.max.x + tol
            && p.y >= self.min.y - tol
            && p.y <= self.max.y + tol
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            self.min,
            Vec2::new(self.max.x, self.min.y),
            self.max,
            Vec2::new(self.min.x, self.max.y),
        ]
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dist_345() {
        assert_eq!(dist(Vec2::new(0.0, 0.0), Vec2::new(3.0, 4.0)), 5.0);
    }

    #[test]
    fn dist_identity() {
        assert_eq!(dist(Vec2::new(5.0, 5.0), Vec2::new(5.0, 5.0)), 0.0);
    }

    #[test]
    fn dist_diagonal() {
        // direct evaluation of sqrt(5000)
        let d = dist(Vec2::new(0.0, 0.0), Vec2::new(50.0, 50.0));
        assert!((d - 70.7107).abs() < 1e-4);
        assert!((d - 5000f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn triangle_inequality(ax in -100.0..100.0f64, ay in -100.0..100.0f64,
                               bx in -100.0..100.0f64, by in -100.0..100.0f64,
                               cx in -100.0..100.0f64, cy in -100.0..100.0f64) {
            let a = Vec2::new(ax, ay);
            let b = Vec2::new(bx, by);
            let c = Vec2::new(cx, cy);
            prop_assert!(dist(a, c) <= dist(a, b) + dist(b, c) + 1e-9);
        }

        #[test]
        fn symmetry(ax in -100.0..100.0f64, ay in -100.0..100.0f64,
                    bx in -100.0..100.0f64, by in -100.0..100.0f64) {
            let a = Vec2::new(ax, ay);
            let b = Vec2::new(bx, by);
            prop_assert_eq!(dist(a, b), dist(b, a));
        }
    }
}
