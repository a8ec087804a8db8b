//! Two-well potential energy surface in the plane.
//!
//! The default landscape has two deep minima near `(±1, 0)` separated by a
//! lower saddle near `(0, -0.25)` and a higher channel through a shallow
//! minimum near `(0, 1.5)`.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// A configuration `q = (x, y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(&self, other: &Position) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (*self - *other).norm()
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Position {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl Add for Position {
    type Output = Position;
    fn add(self, rhs: Position) -> Position {
        Position::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Position {
    type Output = Position;
    fn sub(self, rhs: Position) -> Position {
        Position::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Position {
    type Output = Position;
    fn mul(self, rhs: f64) -> Position {
        Position::new(self.x * rhs, self.y * rhs)
    }
}

/// One term `amplitude * exp(-|q - center|^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTerm {
    pub amplitude: f64,
    pub center: Position,
}

/// Confining term `c_x x^4 + c_y (y - y_offset)^4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuarticTerm {
    pub c_x: f64,
    pub c_y: f64,
    pub y_offset: f64,
}

/// Sum of unit-width Gaussian bumps plus a quartic confinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSpec {
    pub gaussian_terms: Vec<GaussianTerm>,
    pub quartic: QuarticTerm,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        let term = |amplitude, x, y| GaussianTerm {
            amplitude,
            center: Position::new(x, y),
        };
        Self {
            gaussian_terms: vec![
                term(3.0, 0.0, 1.0 / 3.0),
                term(-3.0, 0.0, 5.0 / 3.0),
                term(-5.0, 1.0, 0.0),
                term(-5.0, -1.0, 0.0),
            ],
            quartic: QuarticTerm {
                c_x: 0.2,
                c_y: 0.2,
                y_offset: 1.0 / 3.0,
            },
        }
    }
}

/// Energy at `q`.
pub fn potential(q: Position, spec: &PotentialSpec) -> f64 {
    let bumps: f64 = spec
        .gaussian_terms
        .iter()
        .map(|t| t.amplitude * (-(q - t.center).norm_sq()).exp())
        .sum();
    let dy = q.y - spec.quartic.y_offset;
    bumps + spec.quartic.c_x * q.x.powi(4) + spec.quartic.c_y * dy.powi(4)
}

/// Analytic gradient of [`potential`].
pub fn gradient(q: Position, spec: &PotentialSpec) -> Position {
    let mut g = Position::ORIGIN;
    for t in &spec.gaussian_terms {
        let d = q - t.center;
        let w = -2.0 * t.amplitude * (-d.norm_sq()).exp();
        g.x += w * d.x;
        g.y += w * d.y;
    }
    let dy = q.y - spec.quartic.y_offset;
    g.x += 4.0 * spec.quartic.c_x * q.x.powi(3);
    g.y += 4.0 * spec.quartic.c_y * dy.powi(3);
    g
}

/// Geometry of the two metastable wells and the transition tests built on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WellSpec {
    pub center_a: Position,
    pub center_b: Position,
    /// A path has transitioned once some `x_k` exceeds this value.
    pub transition_x_threshold: f64,
    /// First-crossing height separating the upper and lower channels.
    pub top_y_threshold: f64,
    pub success_radius: f64,
}

impl Default for WellSpec {
    fn default() -> Self {
        Self {
            center_a: Position::new(-1.0, 0.0),
            center_b: Position::new(1.0, 0.0),
            transition_x_threshold: 0.0,
            top_y_threshold: 0.7,
            success_radius: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    InA,
    InB,
    Neither,
}

/// Disk membership, strict inequality on the radius. B is tested first.
pub fn classify_region(q: Position, wells: &WellSpec) -> Region {
    if q.distance(&wells.center_b) < wells.success_radius {
        Region::InB
    } else if q.distance(&wells.center_a) < wells.success_radius {
        Region::InA
    } else {
        Region::Neither
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> PotentialSpec {
        PotentialSpec::default()
    }

    #[test]
    fn wells_have_equal_energy() {
        let s = spec();
        let a = potential(Position::new(1.0, 0.0), &s);
        let b = potential(Position::new(-1.0, 0.0), &s);
        assert_eq!(a, b);
    }

    #[test]
    fn value_at_first_bump_center() {
        let expected = 3.0 - 3.0 * (-16.0f64 / 9.0).exp() - 10.0 * (-10.0f64 / 9.0).exp();
        let v = potential(Position::new(0.0, 1.0 / 3.0), &spec());
        assert!((v - expected).abs() < 1e-14, "{v} vs {expected}");
    }

    #[test]
    fn value_at_dataset_start() {
        // 40-digit mpmath evaluation: -3.99482004072404781207975...
        let v = potential(Position::new(-1.05, -0.04), &spec());
        assert!((v - REF_START_ENERGY).abs() < 1e-12, "{v}");
    }

    const REF_START_ENERGY: f64 = -3.994_820_040_724_048;

    #[test]
    fn gradient_x_vanishes_on_axis() {
        for i in -20..=20 {
            let y = i as f64 * 0.15;
            assert_eq!(gradient(Position::new(0.0, y), &spec()).x, 0.0);
        }
    }

    #[test]
    fn gradient_vanishes_at_located_minimum() {
        // damped descent from the nominal well center
        let s = spec();
        let mut q = Position::new(-1.0, 0.0);
        for _ in 0..20_000 {
            q = q - gradient(q, &s) * 0.05;
        }
        assert!(gradient(q, &s).norm() < 1e-8);
        assert!(q.distance(&Position::new(-1.0, 0.0)) < 0.1);
    }

    #[test]
    fn region_examples() {
        let w = WellSpec::default();
        assert_eq!(classify_region(Position::new(1.0, 0.0), &w), Region::InB);
        assert_eq!(classify_region(Position::new(0.0, 1.0), &w), Region::Neither);
        assert_eq!(classify_region(Position::new(-1.3, 0.2), &w), Region::InA);
        // exactly on the boundary is outside
        assert_eq!(classify_region(Position::new(1.5, 0.0), &w), Region::Neither);
    }

    #[test]
    fn grows_along_rays() {
        let s = spec();
        for k in 0..16 {
            let th = k as f64 * std::f64::consts::PI / 8.0;
            let dir = Position::new(th.cos(), th.sin());
            let v: Vec<f64> = [5.0, 10.0, 20.0].iter().map(|&r| potential(dir * r, &s)).collect();
            assert!(v[0] > 0.0 && v[0] < v[1] && v[1] < v[2], "{th}: {v:?}");
        }
    }

    #[test]
    fn mirror_symmetric_on_a_million_points() {
        let s = spec();
        let mut rng = crate::rng::RngStream::new(101, 0);
        for _ in 0..1_000_000 {
            let (x, y) = (rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0));
            let d = potential(Position::new(x, y), &s) - potential(Position::new(-x, y), &s);
            assert!(d.abs() < 1e-12, "({x}, {y}): {d}");
        }
    }

    #[test]
    fn gradient_matches_differences_on_ten_thousand_points() {
        let s = spec();
        let mut rng = crate::rng::RngStream::new(102, 0);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let q = Position::new(rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0));
            let g = gradient(q, &s);
            let fx = (potential(Position::new(q.x + h, q.y), &s) - potential(Position::new(q.x - h, q.y), &s)) / (2.0 * h);
            let fy = (potential(Position::new(q.x, q.y + h), &s) - potential(Position::new(q.x, q.y - h), &s)) / (2.0 * h);
            let rel = ((g.x - fx).hypot(g.y - fy)) / g.norm().max(1.0);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-5, "{worst}");
    }

    proptest! {
        #[test]
        fn mirror_symmetric(x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let s = spec();
            let d = potential(Position::new(x, y), &s) - potential(Position::new(-x, y), &s);
            prop_assert!(d.abs() < 1e-12);
        }

        #[test]
        fn gradient_matches_central_differences(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let s = spec();
            let h = 1e-6;
            let g = gradient(Position::new(x, y), &s);
            let fx = (potential(Position::new(x + h, y), &s) - potential(Position::new(x - h, y), &s)) / (2.0 * h);
            let fy = (potential(Position::new(x, y + h), &s) - potential(Position::new(x, y - h), &s)) / (2.0 * h);
            let scale = g.norm().max(1.0);
            prop_assert!((g.x - fx).abs() / scale < 1e-5);
            prop_assert!((g.y - fy).abs() / scale < 1e-5);
        }
    }
}
