//! Multi-scale diamond-space heatmaps for vanishing points.
//!
//! A vanishing point given in the bounding-box-normalized frame (box center at
//! the origin, box edges at +-1) is shrunk by a scale factor, mapped into
//! diamond space, rotated by 45 degrees so the diamond fills a square grid,
//! and rendered as a Gaussian blob. Decoding picks, among all scales, the
//! peak whose near-maximum neighbourhood is tightest relative to the peak's
//! distance from the box center.

mod file;

pub use file::{read_heatmap_set, write_heatmap_set, HeatmapFileError, HeatmapSet, MAGIC};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projective::{diamond_cartesian, from_diamond, scale_point, to_diamond, HomogeneousPoint2, ImagePoint};

pub const DEFAULT_SCALES: [f64; 4] = [0.03, 0.1, 0.3, 1.0];
pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_TAU: f64 = 0.8;

/// Gaussian values below this are written as zero.
const GAUSS_FLOOR: f64 = 1e-4;
const DIAMOND_SLACK: f64 = 1e-9;
const DEGENERATE_PEAK_NORM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("point ({x}, {y}) lies outside the diamond")]
    OutOfDiamond { x: f64, y: f64 },
    #[error("heatmap has no positive value")]
    EmptyHeatmap,
    #[error("heatmap peak decodes to the bounding box center")]
    DegeneratePeak,
    #[error("no scale produced a usable vanishing point")]
    AllScalesDegenerate,
    #[error("invalid scale set: {0}")]
    InvalidScaleSet(String),
    #[error("invalid heatmap: {0}")]
    InvalidHeatmap(String),
    #[error("invalid bounding box [{0}, {1}, {2}, {3}]")]
    InvalidBox(f64, f64, f64, f64),
}

/// Ordered, strictly increasing set of positive scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScaleSet(Vec<f64>);

impl ScaleSet {
    pub fn new(scales: Vec<f64>) -> Result<Self, CodecError> {
        if scales.is_empty() {
            return Err(CodecError::InvalidScaleSet("empty".into()));
        }
        if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CodecError::InvalidScaleSet(format!("non-positive scale in {scales:?}")));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CodecError::InvalidScaleSet(format!("not strictly increasing: {scales:?}")));
        }
        Ok(Self(scales))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ScaleSet {
    fn default() -> Self {
        Self(DEFAULT_SCALES.to_vec())
    }
}

impl TryFrom<Vec<f64>> for ScaleSet {
    type Error = CodecError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ScaleSet> for Vec<f64> {
    fn from(s: ScaleSet) -> Self {
        s.0
    }
}

/// Axis-aligned box in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, CodecError> {
        let b = Self { x_min, y_min, x_max, y_max };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(CodecError::InvalidBox(x_min, y_min, x_max, y_max))
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    /// Axis-aligned hull of a set of points.
    pub fn hull<'a>(points: impl IntoIterator<Item = &'a ImagePoint>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Self { x_min: first.x, y_min: first.y, x_max: first.x, y_max: first.y };
        for p in it {
            b.x_min = b.x_min.min(p.x);
            b.y_min = b.y_min.min(p.y);
            b.x_max = b.x_max.max(p.x);
            b.y_max = b.y_max.max(p.y);
        }
        b.is_valid().then_some(b)
    }

    pub fn center(&self) -> ImagePoint {
        ImagePoint::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn half_extent(&self) -> (f64, f64) {
        (0.5 * (self.x_max - self.x_min), 0.5 * (self.y_max - self.y_min))
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Frame pixels to the box frame where the box spans `[-1, 1]` on both axes.
pub fn bbox_normalize(p: ImagePoint, bbox: &BBox) -> ImagePoint {
    let c = bbox.center();
    let (hx, hy) = bbox.half_extent();
    ImagePoint::new((p.x - c.x) / hx, (p.y - c.y) / hy)
}

pub fn bbox_denormalize(p: ImagePoint, bbox: &BBox) -> ImagePoint {
    let c = bbox.center();
    let (hx, hy) = bbox.half_extent();
    ImagePoint::new(c.x + hx * p.x, c.y + hy * p.y)
}

/// [`bbox_normalize`] on homogeneous points; ideal points keep their
/// direction (up to the anisotropic box scaling).
pub fn bbox_normalize_h(p: HomogeneousPoint2, bbox: &BBox) -> HomogeneousPoint2 {
    let c = bbox.center();
    let (hx, hy) = bbox.half_extent();
    HomogeneousPoint2::new((p.x - c.x * p.w) / hx, (p.y - c.y * p.w) / hy, p.w)
}

pub fn bbox_denormalize_h(p: HomogeneousPoint2, bbox: &BBox) -> HomogeneousPoint2 {
    let c = bbox.center();
    let (hx, hy) = bbox.half_extent();
    HomogeneousPoint2::new(c.x * p.w + hx * p.x, c.y * p.w + hy * p.y, p.w)
}

/// Rotated-diamond coordinates to fractional `(row, col)` pixel positions.
///
/// `u = X + Y`, `v = Y - X` turn the diamond into the square `[-1, 1]^2`,
/// whose corners land on the centers of the corner pixels.
pub fn diamond_to_pixel(d: ImagePoint, resolution: usize) -> Result<(f64, f64), CodecError> {
    if !(d.x.abs() + d.y.abs() <= 1.0 + DIAMOND_SLACK) {
        return Err(CodecError::OutOfDiamond { x: d.x, y: d.y });
    }
    let span = (resolution - 1) as f64;
    let u = (d.x + d.y).clamp(-1.0, 1.0);
    let v = (d.y - d.x).clamp(-1.0, 1.0);
    Ok(((v + 1.0) * 0.5 * span, (u + 1.0) * 0.5 * span))
}

pub fn pixel_to_diamond(row: f64, col: f64, resolution: usize) -> ImagePoint {
    let span = (resolution - 1) as f64;
    let u = 2.0 * col / span - 1.0;
    let v = 2.0 * row / span - 1.0;
    ImagePoint::new(0.5 * (u - v), 0.5 * (u + v))
}

/// Grid pixel nearest to a box-normalized vanishing point at `scale`.
pub fn vp_to_pixel(vp: HomogeneousPoint2, scale: f64, resolution: usize) -> Result<(usize, usize), CodecError> {
    let scaled = scale_point(vp, scale).map_err(|e| CodecError::InvalidScaleSet(e.to_string()))?;
    let d = diamond_cartesian(to_diamond(scaled));
    let (row, col) = diamond_to_pixel(d, resolution)?;
    let last = (resolution - 1) as f64;
    Ok((row.round().clamp(0.0, last) as usize, col.round().clamp(0.0, last) as usize))
}

/// Box-normalized vanishing point represented by pixel `(row, col)` of a
/// heatmap at `scale`. May be an ideal point.
pub fn decode_pixel(row: usize, col: usize, scale: f64, resolution: usize) -> HomogeneousPoint2 {
    let d = pixel_to_diamond(row as f64, col as f64, resolution);
    let p = from_diamond(HomogeneousPoint2::new(d.x, d.y, 1.0));
    // unscale by 1/scale
    HomogeneousPoint2::new(p.x, p.y, p.w * scale)
}

/// One heatmap channel: `resolution x resolution` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    resolution: usize,
    scale: f64,
    values: Vec<f32>,
}

impl Heatmap {
    pub fn zeros(resolution: usize, scale: f64) -> Self {
        Self { resolution, scale, values: vec![0.0; resolution * resolution] }
    }

    /// Wraps detector output. Negative and non-finite values are zeroed.
    pub fn from_values(resolution: usize, scale: f64, mut values: Vec<f32>) -> Result<Self, CodecError> {
        if resolution < 2 {
            return Err(CodecError::InvalidHeatmap(format!("resolution {resolution} < 2")));
        }
        if values.len() != resolution * resolution {
            return Err(CodecError::InvalidHeatmap(format!(
                "expected {} values, got {}",
                resolution * resolution,
                values.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(CodecError::InvalidHeatmap(format!("scale {scale}")));
        }
        for v in &mut values {
            if !(v.is_finite() && *v > 0.0) {
                *v = 0.0;
            }
        }
        Ok(Self { resolution, scale, values })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.resolution + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.values[row * self.resolution + col] = if v.is_finite() { v.max(0.0) } else { 0.0 };
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// Adds an unnormalized Gaussian (peak 1) centered on pixel `(row, col)`,
    /// truncated at three standard deviations.
    pub fn splat_gaussian(&mut self, row: usize, col: usize, sigma: f64) {
        let reach = (3.0 * sigma).ceil() as isize;
        let r2_max = 9.0 * sigma * sigma;
        let n = self.resolution as isize;
        for di in -reach..=reach {
            for dj in -reach..=reach {
                let (i, j) = (row as isize + di, col as isize + dj);
                if i < 0 || j < 0 || i >= n || j >= n {
                    continue;
                }
                let d2 = (di * di + dj * dj) as f64;
                if d2 > r2_max {
                    continue;
                }
                let g = (-d2 / (2.0 * sigma * sigma)).exp();
                if g < GAUSS_FLOOR {
                    continue;
                }
                let idx = (i * n + j) as usize;
                self.values[idx] = self.values[idx].max(g as f32);
            }
        }
    }
}

/// Renders a box-normalized vanishing point (finite or ideal) as a target
/// heatmap at one scale.
pub fn encode_vp(vp: HomogeneousPoint2, scale: f64, resolution: usize, sigma: f64) -> Result<Heatmap, CodecError> {
    if !(sigma > 0.0) {
        return Err(CodecError::InvalidHeatmap(format!("sigma {sigma}")));
    }
    let (row, col) = vp_to_pixel(vp, scale, resolution)?;
    let mut h = Heatmap::zeros(resolution, scale);
    h.splat_gaussian(row, col, sigma);
    Ok(h)
}

/// One heatmap per scale of `scales`.
pub fn encode_vp_all(
    vp: HomogeneousPoint2,
    scales: &ScaleSet,
    resolution: usize,
    sigma: f64,
) -> Result<Vec<Heatmap>, CodecError> {
    scales.as_slice().iter().map(|&s| encode_vp(vp, s, resolution, sigma)).collect()
}

/// Argmax and the set of cells within `tau` of it.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapPeak {
    pub peak: (usize, usize),
    pub candidates: Vec<(usize, usize)>,
}

pub fn decode_heatmap(h: &Heatmap, tau: f64) -> Result<HeatmapPeak, CodecError> {
    let n = h.resolution;
    let mut best = 0usize;
    for (idx, &v) in h.values.iter().enumerate() {
        if v > h.values[best] {
            best = idx;
        }
    }
    let max = h.values[best] as f64;
    if max <= 0.0 {
        return Err(CodecError::EmptyHeatmap);
    }
    let threshold = tau * max;
    let candidates = h
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v as f64 >= threshold)
        .map(|(idx, _)| (idx / n, idx % n))
        .collect();
    Ok(HeatmapPeak { peak: (best / n, best % n), candidates })
}

/// Mean over `cells` of `|v - v*| / |v*|`, in the unscaled box-normalized
/// frame. Cells decoding to ideal points are skipped; if the peak itself is
/// ideal every finite cell contributes the limiting value 1.
fn relative_spread(
    peak: (usize, usize),
    cells: impl IntoIterator<Item = (usize, usize)>,
    scale: f64,
    resolution: usize,
) -> Result<f64, CodecError> {
    let vstar = decode_pixel(peak.0, peak.1, scale, resolution).dehomogenize();
    if let Some(v) = vstar {
        if v.norm() < DEGENERATE_PEAK_NORM {
            return Err(CodecError::DegeneratePeak);
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, j) in cells {
        let Some(v) = decode_pixel(i, j, scale, resolution).dehomogenize() else {
            continue;
        };
        sum += match vstar {
            Some(vs) => v.distance(&vs) / vs.norm(),
            None => 1.0,
        };
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Accuracy measure `D^s` of one scale's heatmap.
pub fn accuracy_measure(h: &Heatmap, peak: &HeatmapPeak) -> Result<f64, CodecError> {
    relative_spread(peak.peak, peak.candidates.iter().copied(), h.scale, h.resolution)
}

fn neighbours(peak: (usize, usize), resolution: usize) -> impl Iterator<Item = (usize, usize)> {
    let n = resolution as isize;
    let (r, c) = (peak.0 as isize, peak.1 as isize);
    (-1..=1isize)
        .flat_map(move |di| (-1..=1isize).map(move |dj| (r + di, c + dj)))
        .filter(move |&(i, j)| (i, j) != (r, c) && i >= 0 && j >= 0 && i < n && j < n)
        .map(|(i, j)| (i as usize, j as usize))
}

/// Angle between the lines joining the box center to `a` and to `b`,
/// in `[0, pi/2]`. Undirected so that ideal points compare sensibly.
pub fn undirected_angle(a: HomogeneousPoint2, b: HomogeneousPoint2) -> f64 {
    let cross = a.x * b.y - a.y * b.x;
    let dot = a.x * b.x + a.y * b.y;
    cross.abs().atan2(dot.abs())
}

/// Largest direction change between the VP of `peak` and those of its
/// eight neighbours.
pub fn angular_quantization_bound(peak: (usize, usize), scale: f64, resolution: usize) -> f64 {
    let vstar = decode_pixel(peak.0, peak.1, scale, resolution);
    neighbours(peak, resolution)
        .map(|(i, j)| undirected_angle(vstar, decode_pixel(i, j, scale, resolution)))
        .fold(0.0, f64::max)
}

/// A vanishing point decoded from a multi-scale heatmap stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VPDetection {
    /// Frame pixels; `w == 0` when `direction_only`.
    pub point: HomogeneousPoint2,
    /// `D^s` of the chosen scale.
    pub uncertainty: f64,
    pub chosen_scale: f64,
    /// One-pixel angular quantization of the chosen scale, radians.
    pub angular_bound: f64,
    pub direction_only: bool,
}

impl VPDetection {
    pub fn image_point(&self) -> Option<ImagePoint> {
        if self.direction_only {
            None
        } else {
            self.point.dehomogenize()
        }
    }
}

/// Per-scale decoding result in box-normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleCandidate {
    pub scale: f64,
    pub resolution: usize,
    pub peak: (usize, usize),
    pub vp: HomogeneousPoint2,
    pub accuracy: f64,
    pub angular_bound: f64,
}

impl ScaleCandidate {
    /// Whether re-encoding this candidate's VP at `other`'s scale lands on
    /// `other`'s peak.
    pub fn agrees_with(&self, other: &ScaleCandidate) -> bool {
        vp_to_pixel(self.vp, other.scale, other.resolution).ok() == Some(other.peak)
    }
}

/// Decodes every usable scale. Scales whose heatmap is empty or whose peak
/// sits on the box center are left out.
pub fn scale_candidates(heatmaps: &[Heatmap], tau: f64) -> Vec<ScaleCandidate> {
    heatmaps
        .iter()
        .filter_map(|h| {
            let peak = decode_heatmap(h, tau).ok()?;
            let accuracy = accuracy_measure(h, &peak).ok()?;
            Some(ScaleCandidate {
                scale: h.scale,
                resolution: h.resolution,
                peak: peak.peak,
                vp: decode_pixel(peak.peak.0, peak.peak.1, h.scale, h.resolution),
                accuracy,
                angular_bound: angular_quantization_bound(peak.peak, h.scale, h.resolution),
            })
        })
        .collect()
}

/// The scale minimizing `D^s`.
///
/// Sharp peaks tie at `D^s = 0` on every scale, so ties go to the candidate
/// that agrees with the most other scales' peaks, then to the finest angular
/// quantization, then to the earlier scale. The true VP lies in the cell of
/// every scale, so a candidate inside all of them is the finest consistent
/// reading of the stack.
pub fn best_candidate(candidates: &[ScaleCandidate]) -> Option<&ScaleCandidate> {
    let agreement = |c: &ScaleCandidate| candidates.iter().filter(|o| o.scale != c.scale && c.agrees_with(o)).count();
    candidates
        .iter()
        .map(|c| (c, agreement(c)))
        .reduce(|best, cur| {
            let key = cur
                .0
                .accuracy
                .total_cmp(&best.0.accuracy)
                .then(best.1.cmp(&cur.1))
                .then(cur.0.angular_bound.total_cmp(&best.0.angular_bound));
            if key.is_lt() {
                cur
            } else {
                best
            }
        })
        .map(|(c, _)| c)
}

/// Picks the best scale and maps its peak back to frame pixels.
pub fn select_vp(heatmaps: &[Heatmap], bbox: &BBox, tau: f64) -> Result<VPDetection, CodecError> {
    let candidates = scale_candidates(heatmaps, tau);
    let best = best_candidate(&candidates).ok_or(CodecError::AllScalesDegenerate)?;
    let mut point = bbox_denormalize_h(best.vp, bbox);
    let direction_only = point.is_ideal();
    if direction_only {
        point.w = 0.0;
    } else {
        point = point.scaled(1.0 / point.w);
    }
    Ok(VPDetection {
        point,
        uncertainty: best.accuracy,
        chosen_scale: best.scale,
        angular_bound: best.angular_bound,
        direction_only,
    })
}
