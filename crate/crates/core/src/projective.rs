//! Homogeneous points and lines of the real projective plane, and the
//! diamond-space mapping that sends the whole plane into the bounded
//! diamond `|X| + |Y| <= 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this magnitude (relative to the largest coordinate) a homogeneous
/// `w` is treated as zero.
pub const IDEAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate input: points coincide projectively")]
    DegenerateInput,
    #[error("invalid scale {0}: must be positive and finite")]
    InvalidScale(f64),
}

/// Sign with `sgn(0) = +1`, so that the image origin maps to a finite
/// diamond point.
#[inline]
pub fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// A finite point in some 2D image coordinate system.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_homogeneous(self) -> HomogeneousPoint2 {
        HomogeneousPoint2::new(self.x, self.y, 1.0)
    }
}

impl From<[f64; 2]> for ImagePoint {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<ImagePoint> for [f64; 2] {
    fn from(p: ImagePoint) -> Self {
        [p.x, p.y]
    }
}

/// A point of the projective plane, `(x, y, w) ~ (lx, ly, lw)` for `l != 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousPoint2 {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl HomogeneousPoint2 {
    pub const fn new(x: f64, y: f64, w: f64) -> Self {
        Self { x, y, w }
    }

    /// The ideal point in direction `(dx, dy)`.
    pub const fn ideal(dx: f64, dy: f64) -> Self {
        Self::new(dx, dy, 0.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.w]
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.w * self.w).sqrt()
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && (self.x != 0.0 || self.y != 0.0 || self.w != 0.0)
    }

    /// True when the point lies (numerically) on the line at infinity.
    pub fn is_ideal(&self) -> bool {
        self.w.abs() <= IDEAL_EPS * self.x.abs().max(self.y.abs())
    }

    /// Cartesian coordinates, or `None` for points at infinity.
    pub fn dehomogenize(&self) -> Option<ImagePoint> {
        if self.is_ideal() {
            None
        } else {
            Some(ImagePoint::new(self.x / self.w, self.y / self.w))
        }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self::new(lambda * self.x, lambda * self.y, lambda * self.w)
    }

    pub fn cross(&self, other: &Self) -> [f64; 3] {
        cross(self.as_array(), other.as_array())
    }

    /// Norm of `p x q` divided by `|p| |q|`: the sine of the angle between the
    /// two representative vectors. Zero iff the points coincide projectively.
    pub fn projective_residual(&self, other: &Self) -> f64 {
        let c = self.cross(other);
        let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        n / (self.norm() * other.norm())
    }

    pub fn same_point(&self, other: &Self, tol: f64) -> bool {
        self.projective_residual(other) <= tol
    }

    /// Representative with `w >= 0`; points at infinity get `y >= 0`, and
    /// `x > 0` when also `y == 0`. Makes the sign-branching diamond mapping a
    /// function of the projective point rather than of its representative.
    fn canonical(&self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.x < 0.0
        };
        if flip {
            self.scaled(-1.0)
        } else {
            *self
        }
    }
}

impl From<ImagePoint> for HomogeneousPoint2 {
    fn from(p: ImagePoint) -> Self {
        p.to_homogeneous()
    }
}

/// A line `a x + b y + c w = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2 {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub const LINE_AT_INFINITY: Line2 = Line2::new(0.0, 0.0, 1.0);

    pub fn as_array(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn norm(&self) -> f64 {
        (self.a * self.a + self.b * self.b + self.c * self.c).sqrt()
    }

    /// `<l, p> / (|l| |p|)`.
    pub fn incidence(&self, p: &HomogeneousPoint2) -> f64 {
        (self.a * p.x + self.b * p.y + self.c * p.w) / (self.norm() * p.norm())
    }

    pub fn is_line_at_infinity(&self, tol: f64) -> bool {
        self.a.hypot(self.b) <= tol * self.c.abs()
    }

    /// Angle of the line direction in radians, in `(-pi/2, pi/2]`.
    pub fn angle(&self) -> f64 {
        let t = (-self.a).atan2(self.b);
        if t <= -std::f64::consts::FRAC_PI_2 {
            t + std::f64::consts::PI
        } else if t > std::f64::consts::FRAC_PI_2 {
            t - std::f64::consts::PI
        } else {
            t
        }
    }

    /// `y` on the line at `x`; `None` for vertical lines.
    pub fn y_at(&self, x: f64) -> Option<f64> {
        if self.b == 0.0 {
            None
        } else {
            Some(-(self.a * x + self.c) / self.b)
        }
    }
}

#[inline]
pub fn cross(p: [f64; 3], q: [f64; 3]) -> [f64; 3] {
    [p[1] * q[2] - p[2] * q[1], p[2] * q[0] - p[0] * q[2], p[0] * q[1] - p[1] * q[0]]
}

/// Maps a point of the original projective plane into diamond space.
///
/// The result, once dehomogenized, lies in the closed diamond
/// `|X| + |Y| <= 1`: with the canonical representative the third coordinate
/// has magnitude `|x| + |y| + |w|`.
pub fn to_diamond(p: HomogeneousPoint2) -> HomogeneousPoint2 {
    let HomogeneousPoint2 { x, y, w } = p.canonical();
    // sgn(x) sgn(y) agrees with sgn(xy) whenever xy != 0 and keeps the
    // x-axis (y == 0, x < 0) on the diamond boundary.
    HomogeneousPoint2::new(-w, -x, sgn(x) * sgn(y) * x + y + sgn(y) * w)
}

/// Inverse of [`to_diamond`] up to projective scale.
pub fn from_diamond(d: HomogeneousPoint2) -> HomogeneousPoint2 {
    let d = if d.w < 0.0 { d.scaled(-1.0) } else { d };
    let HomogeneousPoint2 { x, y, w } = d;
    HomogeneousPoint2::new(y, sgn(x) * x + sgn(y) * y - w, x)
}

/// Dehomogenized diamond coordinates. Diamond points with `w` numerically
/// zero never come out of [`to_diamond`]; for foreign inputs they are pushed
/// onto the diamond boundary along their direction.
pub fn diamond_cartesian(d: HomogeneousPoint2) -> ImagePoint {
    match d.dehomogenize() {
        Some(p) => p,
        None => {
            let s = d.x.abs() + d.y.abs();
            ImagePoint::new(d.x / s, d.y / s)
        }
    }
}

/// The line through two points.
pub fn line_through(p: HomogeneousPoint2, q: HomogeneousPoint2) -> Result<Line2, GeometryError> {
    if !p.is_valid() || !q.is_valid() || p.same_point(&q, 1e-15) {
        return Err(GeometryError::DegenerateInput);
    }
    let c = p.cross(&q);
    Ok(Line2::new(c[0], c[1], c[2]))
}

/// Multiplies the dehomogenized coordinates by `s`; ideal points are fixed.
pub fn scale_point(p: HomogeneousPoint2, s: f64) -> Result<HomogeneousPoint2, GeometryError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(GeometryError::InvalidScale(s));
    }
    Ok(HomogeneousPoint2::new(s * p.x, s * p.y, p.w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hp(x: f64, y: f64, w: f64) -> HomogeneousPoint2 {
        HomogeneousPoint2::new(x, y, w)
    }

    #[test]
    fn to_diamond_examples() {
        assert_eq!(to_diamond(hp(1.0, 1.0, 1.0)), hp(-1.0, -1.0, 3.0));
        assert_eq!(to_diamond(hp(0.0, 0.0, 1.0)), hp(-1.0, 0.0, 1.0));
        // -0.0 from the negated x is fine, compare projectively
        assert!(to_diamond(hp(1.0, 0.0, 0.0)).same_point(&hp(0.0, -1.0, 1.0), 0.0));
        let c = diamond_cartesian(to_diamond(hp(1.0, 1.0, 1.0)));
        assert!((c.x + 1.0 / 3.0).abs() < 1e-15 && (c.y + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn from_diamond_examples() {
        let p = from_diamond(hp(-1.0, -1.0, 3.0));
        assert_eq!(p, hp(-1.0, -1.0, -1.0));
        assert!(p.same_point(&hp(1.0, 1.0, 1.0), 0.0));
        let q = from_diamond(hp(0.0, -1.0, 1.0));
        assert_eq!(q, hp(-1.0, 0.0, 0.0));
    }

    #[test]
    fn negative_x_axis_stays_on_the_boundary() {
        for x in [-0.5, -1.0, -2.0, -1e6] {
            let d = diamond_cartesian(to_diamond(hp(x, 0.0, 1.0)));
            assert!((d.x.abs() + d.y.abs() - 1.0).abs() < 1e-12, "{x}: {d:?}");
            let back = from_diamond(to_diamond(hp(x, 0.0, 1.0)));
            assert!(back.same_point(&hp(x, 0.0, 1.0), 1e-15));
        }
    }

    #[test]
    fn origin_and_axes_round_trip() {
        for p in [
            hp(0.0, 0.0, 1.0),
            hp(0.0, 3.0, 1.0),
            hp(0.0, -3.0, 1.0),
            hp(3.0, 0.0, 1.0),
            hp(0.0, 1.0, 0.0),
            hp(-1.0, 0.0, 0.0),
        ] {
            let back = from_diamond(to_diamond(p));
            assert!(back.same_point(&p, 1e-15), "{p:?} -> {back:?}");
        }
    }

    #[test]
    fn line_through_examples() {
        let l = line_through(hp(0.0, 0.0, 1.0), hp(1.0, 0.0, 1.0)).unwrap();
        assert!(hp(l.a, l.b, l.c).same_point(&hp(0.0, 1.0, 0.0), 1e-15));

        let l = line_through(hp(1.0, 0.0, 0.0), hp(0.0, 1.0, 0.0)).unwrap();
        assert!(hp(l.a, l.b, l.c).same_point(&hp(0.0, 0.0, 1.0), 1e-15));

        let p = hp(100.0, 0.0, 1.0);
        let q = hp(-100.0, 50.0, 1.0);
        let l = line_through(p, q).unwrap();
        // slope = -a / b
        assert!((-l.a / l.b + 0.25).abs() < 1e-15);
        assert!(l.incidence(&p).abs() < 1e-15 && l.incidence(&q).abs() < 1e-15);
    }

    #[test]
    fn line_through_rejects_coincident_points() {
        assert_eq!(line_through(hp(1.0, 2.0, 1.0), hp(2.0, 4.0, 2.0)), Err(GeometryError::DegenerateInput));
        assert_eq!(line_through(hp(0.0, 0.0, 0.0), hp(2.0, 4.0, 2.0)), Err(GeometryError::DegenerateInput));
    }

    #[test]
    fn scale_point_examples() {
        assert_eq!(scale_point(hp(10.0, 20.0, 1.0), 0.1).unwrap(), hp(1.0, 2.0, 1.0));
        assert!(scale_point(hp(1.0, 0.0, 0.0), 0.03).unwrap().same_point(&hp(1.0, 0.0, 0.0), 0.0));
        let s = scale_point(hp(-300.0, 50.0, 1.0), 0.03).unwrap();
        assert!((s.x + 9.0).abs() < 1e-12 && (s.y - 1.5).abs() < 1e-12 && s.w == 1.0);
        assert_eq!(scale_point(hp(1.0, 1.0, 1.0), 0.0), Err(GeometryError::InvalidScale(0.0)));
        assert!(scale_point(hp(1.0, 1.0, 1.0), -2.0).is_err());
    }

    #[test]
    fn horizon_line_angle() {
        // y = 0.5 x + 30
        let l = Line2::new(0.5, -1.0, 30.0);
        assert!((l.angle() - 0.5f64.atan()).abs() < 1e-15);
        assert_eq!(l.y_at(10.0), Some(35.0));
    }

    fn coord() -> impl Strategy<Value = f64> {
        prop_oneof![-1e4..-1e-3f64, 1e-3..1e4f64]
    }

    proptest! {
        #[test]
        fn round_trip(x in coord(), y in coord(), w in coord()) {
            let p = hp(x, y, w);
            let back = from_diamond(to_diamond(p));
            prop_assert!(back.projective_residual(&p) < 1e-9);
        }

        #[test]
        fn bounded(x in -1e6..1e6f64, y in -1e6..1e6f64, w in -1e3..1e3f64) {
            prop_assume!(x != 0.0 || y != 0.0 || w != 0.0);
            let d = diamond_cartesian(to_diamond(hp(x, y, w)));
            prop_assert!(d.x.abs() + d.y.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn projective_equivariance(x in coord(), y in coord(), w in coord(), l in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64]) {
            let p = hp(x, y, w);
            let a = to_diamond(p);
            let b = to_diamond(p.scaled(l));
            prop_assert!(a.projective_residual(&b) < 1e-12);
        }

        #[test]
        fn line_incidence(a in coord(), b in coord(), c in coord(), d in coord()) {
            let p = hp(a, b, 1.0);
            let q = hp(c, d, 1.0);
            prop_assume!(p.projective_residual(&q) > 1e-6);
            let l = line_through(p, q).unwrap();
            prop_assert!(l.incidence(&p).abs() <= 1e-9);
            prop_assert!(l.incidence(&q).abs() <= 1e-9);
        }
    }
}
