//! Camera calibration from many orthogonal vanishing point pairs.
//!
//! Each pair constrains the focal length given the principal point; the
//! per-pair focal lengths are reduced with a median. The horizon is fitted
//! with a median-of-slopes, median-of-intercepts estimator, and the road
//! plane normal follows as `K^T h`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projective::{HomogeneousPoint2, ImagePoint, Line2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("vanishing points give an imaginary focal length")]
    ImaginaryFocal,
    #[error("focal length below {0} px")]
    NearZeroFocal(f64),
    #[error("pair contains a vanishing point at infinity")]
    DirectionOnly,
    #[error("only {found} usable pairs, need {needed}")]
    InsufficientPairs { found: usize, needed: usize },
    #[error("{skipped} of {total} pairs have a near-vertical vanishing line")]
    NearVerticalHorizon { skipped: usize, total: usize },
    #[error("plane normal vanishes")]
    DegenerateNormal,
    #[error("image point lies on the horizon")]
    PointOnHorizon,
    #[error("invalid calibration input: {0}")]
    InvalidInput(String),
}

/// Vanishing points of one vehicle: along its heading and along its axles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VPPair {
    pub first: HomogeneousPoint2,
    pub second: HomogeneousPoint2,
    /// Zero excludes the pair; any positive value counts as one vote.
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl VPPair {
    pub fn new(first: HomogeneousPoint2, second: HomogeneousPoint2) -> Self {
        Self { first, second, weight: 1.0 }
    }

    pub fn from_points(first: ImagePoint, second: ImagePoint) -> Self {
        Self::new(first.to_homogeneous(), second.to_homogeneous())
    }

    fn active(&self) -> bool {
        self.weight > 0.0
    }

    fn finite(&self) -> Option<(ImagePoint, ImagePoint)> {
        Some((self.first.dehomogenize()?, self.second.dehomogenize()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub principal_point: ImagePoint,
}

impl CameraIntrinsics {
    /// `K^T h`.
    pub fn transpose_times(&self, h: &Line2) -> Vector3<f64> {
        let p = self.principal_point;
        Vector3::new(self.f * h.a, self.f * h.b, p.x * h.a + p.y * h.b + h.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraCalibration {
    pub intrinsics: CameraIntrinsics,
    pub horizon: Line2,
    /// Unit normal of the road plane in camera coordinates, `z >= 0`.
    pub plane_normal: [f64; 3],
    /// Distance of the plane from the camera center along the normal.
    pub delta: f64,
    pub n_pairs_used: usize,
    pub n_pairs_rejected: usize,
}

impl CameraCalibration {
    pub fn normal(&self) -> Vector3<f64> {
        Vector3::from(self.plane_normal)
    }

    /// Sets `delta` so that the plane distance between `a` and `b` equals
    /// `distance`.
    pub fn with_reference_distance(
        mut self,
        a: ImagePoint,
        b: ImagePoint,
        distance: f64,
    ) -> Result<Self, CalibrationError> {
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(CalibrationError::InvalidInput(format!("reference distance {distance}")));
        }
        let d = (project_to_plane(a, &self)? - project_to_plane(b, &self)?).norm();
        if !(d > 0.0) {
            return Err(CalibrationError::InvalidInput("reference points coincide on the plane".into()));
        }
        self.delta *= distance / d;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub min_pairs: usize,
    /// Smallest accepted focal length in pixels.
    pub min_focal: f64,
    /// Pairs with `|u_x - v_x|` at or below this are left out of the slope median.
    pub vertical_eps: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { min_pairs: 5, min_focal: 1.0, vertical_eps: 1e-6 }
    }
}

/// Focal length from one pair: `f^2 = -(u - p) . (v - p)`.
pub fn focal_from_pair(pair: &VPPair, p: ImagePoint, min_focal: f64) -> Result<f64, CalibrationError> {
    let (u, v) = pair.finite().ok_or(CalibrationError::DirectionOnly)?;
    let dot = (u.x - p.x) * (v.x - p.x) + (u.y - p.y) * (v.y - p.y);
    if !(dot < 0.0) {
        return Err(CalibrationError::ImaginaryFocal);
    }
    let f2 = -dot;
    if f2 < min_focal * min_focal {
        return Err(CalibrationError::NearZeroFocal(min_focal));
    }
    Ok(f2.sqrt())
}

/// Median; even counts average the two central values. `None` when empty.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Per-pair focal lengths of the active pairs that survive the validity checks.
pub fn pair_focals(pairs: &[VPPair], p: ImagePoint, cfg: &CalibrationConfig) -> Vec<f64> {
    pairs.iter().filter(|pair| pair.active()).filter_map(|pair| focal_from_pair(pair, p, cfg.min_focal).ok()).collect()
}

pub fn estimate_focal(pairs: &[VPPair], p: ImagePoint, cfg: &CalibrationConfig) -> Result<f64, CalibrationError> {
    let mut focals = pair_focals(pairs, p, cfg);
    if focals.len() < cfg.min_pairs.max(1) {
        return Err(CalibrationError::InsufficientPairs { found: focals.len(), needed: cfg.min_pairs.max(1) });
    }
    Ok(median(&mut focals).expect("non-empty"))
}

/// Slope of the line through a pair, if it has one in slope-intercept form.
/// An ideal point contributes its direction.
fn pair_slope(pair: &VPPair, eps_x: f64) -> Option<f64> {
    let (u, v) = (pair.first, pair.second);
    let (dx, dy) = match (u.dehomogenize(), v.dehomogenize()) {
        (Some(a), Some(b)) => (a.x - b.x, a.y - b.y),
        (Some(_), None) => (v.x, v.y),
        (None, Some(_)) => (u.x, u.y),
        (None, None) => return None,
    };
    let ideal = u.is_ideal() || v.is_ideal();
    let vertical = if ideal { dx.abs() <= 1e-12 * dy.abs() } else { dx.abs() <= eps_x };
    (!vertical && dx.is_finite() && dy.is_finite()).then(|| dy / dx)
}

/// Horizon `y = m x + q` with `m` the median pair slope and `q` the median
/// of `v_y - m v_x` over every finite vanishing point. Returned as
/// `(m, -1, q)`.
pub fn estimate_horizon(pairs: &[VPPair], cfg: &CalibrationConfig) -> Result<Line2, CalibrationError> {
    let active: Vec<&VPPair> = pairs.iter().filter(|p| p.active()).collect();
    let needed = cfg.min_pairs.max(1);
    let mut slopes: Vec<f64> = Vec::with_capacity(active.len());
    let mut skipped = 0usize;
    for pair in &active {
        match pair_slope(pair, cfg.vertical_eps) {
            Some(m) => slopes.push(m),
            None => skipped += 1,
        }
    }
    if 2 * skipped > active.len() {
        return Err(CalibrationError::NearVerticalHorizon { skipped, total: active.len() });
    }
    if slopes.len() < needed {
        return Err(CalibrationError::InsufficientPairs { found: slopes.len(), needed });
    }
    let m = median(&mut slopes).expect("non-empty");
    let mut intercepts: Vec<f64> = active
        .iter()
        .flat_map(|pair| [pair.first, pair.second])
        .filter_map(|vp| vp.dehomogenize())
        .map(|v| v.y - v.x * m)
        .filter(|q| q.is_finite())
        .collect();
    let q = median(&mut intercepts).ok_or(CalibrationError::InsufficientPairs { found: 0, needed })?;
    Ok(Line2::new(m, -1.0, q))
}

/// Road plane normal `K^T h`: the raw vector and its unit copy with `z >= 0`.
pub fn plane_normal_from_horizon(
    h: &Line2,
    k: &CameraIntrinsics,
) -> Result<(Vector3<f64>, Vector3<f64>), CalibrationError> {
    let n = k.transpose_times(h);
    let norm = n.norm();
    if !(norm >= 1e-12) || !norm.is_finite() {
        return Err(CalibrationError::DegenerateNormal);
    }
    let mut unit = n / norm;
    if unit.z < 0.0 {
        unit = -unit;
    }
    Ok((n, unit))
}

/// Back-projects an image point onto the road plane `Q . n = -delta`.
pub fn project_to_plane(q: ImagePoint, cal: &CameraCalibration) -> Result<Vector3<f64>, CalibrationError> {
    let k = &cal.intrinsics;
    let ray = Vector3::new(q.x - k.principal_point.x, q.y - k.principal_point.y, k.f);
    let n = cal.normal();
    let denom = ray.dot(&n);
    if !(denom.abs() >= 1e-9 * ray.norm() * n.norm()) {
        return Err(CalibrationError::PointOnHorizon);
    }
    Ok(ray * (-cal.delta / denom))
}

/// Full procedure: principal point `p`, median focal, horizon, plane normal.
pub fn calibrate_with_principal_point(
    pairs: &[VPPair],
    p: ImagePoint,
    cfg: &CalibrationConfig,
) -> Result<CameraCalibration, CalibrationError> {
    if !p.is_finite() {
        return Err(CalibrationError::InvalidInput("principal point not finite".into()));
    }
    let active = pairs.iter().filter(|p| p.active()).count();
    let used = pair_focals(pairs, p, cfg).len();
    let f = estimate_focal(pairs, p, cfg)?;
    let horizon = estimate_horizon(pairs, cfg)?;
    let intrinsics = CameraIntrinsics { f, principal_point: p };
    let (_, unit) = plane_normal_from_horizon(&horizon, &intrinsics)?;
    Ok(CameraCalibration {
        intrinsics,
        horizon,
        plane_normal: unit.into(),
        delta: 1.0,
        n_pairs_used: used,
        n_pairs_rejected: active - used,
    })
}

/// [`calibrate_with_principal_point`] with the principal point at the image
/// center.
pub fn calibrate(
    pairs: &[VPPair],
    image_size: (f64, f64),
    cfg: &CalibrationConfig,
) -> Result<CameraCalibration, CalibrationError> {
    let (w, h) = image_size;
    if !(w > 0.0 && h > 0.0) {
        return Err(CalibrationError::InvalidInput(format!("image size {w}x{h}")));
    }
    calibrate_with_principal_point(pairs, ImagePoint::new(w / 2.0, h / 2.0), cfg)
}
