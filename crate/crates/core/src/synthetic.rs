//! Ground-truth oracle: pinhole cameras over a flat road, vehicles with known
//! headings, their exact (or noisy) vanishing point pairs, tape measurements,
//! and the perspective augmentation used to diversify training crops.
//!
//! World frame: road plane `z = 0`, `z` up. Camera frame: `x` right, `y`
//! down, `z` along the optical axis.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{plane_normal_from_horizon, CameraCalibration, CameraIntrinsics, VPPair};
use crate::evaluation::DistanceMeasurement;
use crate::heatmap::BBox;
use crate::projective::{HomogeneousPoint2, ImagePoint, Line2};

/// Directions within this of the image plane give vanishing points at infinity.
const PARALLEL_EPS: f64 = 1e-9;
const MAX_GROUND_RANGE_M: f64 = 80.0;
const MIN_GROUND_RANGE_M: f64 = 2.0;
const SAMPLE_TRIES: usize = 10_000;
const HOMOGRAPHY_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("camera sees too little of the road plane")]
    NoVisibleGround,
    #[error("perturbed corners are degenerate after {0} attempts")]
    DegenerateHomography(usize),
    #[error("invalid augmentation parameters: {0}")]
    InvalidParams(String),
}

/// Generator for one indexed stream of a seed. Streams are independent, so
/// per-vehicle draws do not depend on evaluation order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCamera {
    pub f: f64,
    pub principal_point: ImagePoint,
    /// World to camera.
    pub rotation: Matrix3<f64>,
    pub image_size: (f64, f64),
    /// Camera center sits at `(0, 0, height)`.
    pub height: f64,
}

impl SyntheticCamera {
    /// Camera looking along world `+y`, pitched down by `tilt_deg` and rolled
    /// by `roll_deg` about its optical axis.
    pub fn from_angles(f: f64, image_size: (f64, f64), tilt_deg: f64, roll_deg: f64, height: f64) -> Self {
        let level = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let (st, ct) = tilt_deg.to_radians().sin_cos();
        let tilt = Matrix3::new(1.0, 0.0, 0.0, 0.0, ct, -st, 0.0, st, ct);
        let (sr, cr) = roll_deg.to_radians().sin_cos();
        let roll = Matrix3::new(cr, -sr, 0.0, sr, cr, 0.0, 0.0, 0.0, 1.0);
        Self {
            f,
            principal_point: ImagePoint::new(image_size.0 / 2.0, image_size.1 / 2.0),
            rotation: roll * tilt * level,
            image_size,
            height,
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics { f: self.f, principal_point: self.principal_point }
    }

    pub fn k(&self) -> Matrix3<f64> {
        let p = self.principal_point;
        Matrix3::new(self.f, 0.0, p.x, 0.0, self.f, p.y, 0.0, 0.0, 1.0)
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.height)
    }

    /// Vanishing point of a world direction.
    pub fn project_direction(&self, d_world: Vector3<f64>) -> HomogeneousPoint2 {
        let d = self.rotation * d_world;
        if d.z.abs() <= PARALLEL_EPS * d.norm() {
            return HomogeneousPoint2::ideal(self.f * d.x, self.f * d.y);
        }
        let p = self.k() * d;
        HomogeneousPoint2::new(p.x / p.z, p.y / p.z, 1.0)
    }

    /// Image of a world point; `None` behind the camera.
    pub fn project_point(&self, x_world: Vector3<f64>) -> Option<ImagePoint> {
        let x = self.rotation * (x_world - self.center());
        if x.z <= 1e-9 {
            return None;
        }
        let p = self.k() * x;
        Some(ImagePoint::new(p.x / p.z, p.y / p.z))
    }

    /// Intersection of the viewing ray of `q` with the road, if it lies
    /// ahead within `max_range`.
    pub fn back_project_to_ground(&self, q: ImagePoint, max_range: f64) -> Option<Vector3<f64>> {
        let pp = self.principal_point;
        let ray_cam = Vector3::new((q.x - pp.x) / self.f, (q.y - pp.y) / self.f, 1.0);
        let ray = self.rotation.transpose() * ray_cam;
        if ray.z >= 0.0 {
            return None;
        }
        let t = self.height / -ray.z;
        let g = self.center() + ray * t;
        let range = g.xy().norm();
        (range >= MIN_GROUND_RANGE_M && range <= max_range).then_some(g)
    }

    pub fn contains(&self, q: ImagePoint) -> bool {
        q.x >= 0.0 && q.y >= 0.0 && q.x <= self.image_size.0 && q.y <= self.image_size.1
    }

    /// Road normal (world up) in camera coordinates.
    pub fn up_in_camera(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    /// True horizon, `y = m x + q` scaled to `(m, -1, q)` when not vertical.
    pub fn horizon(&self) -> Line2 {
        let n = self.up_in_camera();
        let pp = self.principal_point;
        let (a, b) = (n.x / self.f, n.y / self.f);
        let c = n.z - pp.x * a - pp.y * b;
        if b.abs() > 1e-15 {
            Line2::new(a / -b, -1.0, c / -b)
        } else {
            Line2::new(a, b, c)
        }
    }

    /// The calibration an exact method should recover. Uses the same sign
    /// conventions as [`crate::calibration::calibrate`].
    pub fn ground_truth(&self) -> CameraCalibration {
        let horizon = self.horizon();
        let intrinsics = self.intrinsics();
        let (_, unit) = plane_normal_from_horizon(&horizon, &intrinsics).expect("camera horizon is finite");
        CameraCalibration {
            intrinsics,
            horizon,
            plane_normal: unit.into(),
            delta: self.height,
            n_pairs_used: 0,
            n_pairs_rejected: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVehicle {
    /// Ground position of the vehicle center, meters.
    pub position: [f64; 2],
    /// Radians from world `+x`.
    pub heading: f64,
    /// Length, width, height in meters.
    pub dims: [f64; 3],
}

impl SyntheticVehicle {
    pub fn forward(&self) -> Vector3<f64> {
        Vector3::new(self.heading.cos(), self.heading.sin(), 0.0)
    }

    pub fn lateral(&self) -> Vector3<f64> {
        Vector3::new(-self.heading.sin(), self.heading.cos(), 0.0)
    }

    /// Corners of the vehicle's cuboid: bottom face, then top face.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let [l, w, h] = self.dims;
        let c = Vector3::new(self.position[0], self.position[1], 0.0);
        let (fw, lat) = (self.forward() * (l / 2.0), self.lateral() * (w / 2.0));
        let up = Vector3::z() * h;
        let base = [c + fw + lat, c + fw - lat, c - fw - lat, c - fw + lat];
        [base[0], base[1], base[2], base[3], base[0] + up, base[1] + up, base[2] + up, base[3] + up]
    }
}

/// First VP along the heading, second along the axles.
pub fn vehicle_vps(cam: &SyntheticCamera, veh: &SyntheticVehicle) -> VPPair {
    VPPair::new(cam.project_direction(veh.forward()), cam.project_direction(veh.lateral()))
}

/// Image of the vehicle's cuboid, `None` if any corner is behind the camera.
pub fn vehicle_bbox_3d(cam: &SyntheticCamera, veh: &SyntheticVehicle) -> Option<[ImagePoint; 8]> {
    let mut out = [ImagePoint::default(); 8];
    for (o, c) in out.iter_mut().zip(veh.corners()) {
        *o = cam.project_point(c)?;
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_vehicles: usize,
    pub f: f64,
    pub tilt_deg: f64,
    pub roll_deg: f64,
    pub image_size: [u32; 2],
    pub noise_sigma_px: f64,
    pub outlier_fraction: f64,
    pub n_measurements: usize,
    #[serde(default = "default_height")]
    pub camera_height_m: f64,
    /// Defaults to the image center.
    #[serde(default)]
    pub principal_point: Option<[f64; 2]>,
}

fn default_height() -> f64 {
    10.0
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_vehicles: 20,
            f: 1200.0,
            tilt_deg: 20.0,
            roll_deg: 3.0,
            image_size: [1920, 1080],
            noise_sigma_px: 0.0,
            outlier_fraction: 0.0,
            n_measurements: 10,
            camera_height_m: default_height(),
            principal_point: None,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidSpec(m));
        if !(self.f > 0.0 && self.f.is_finite()) {
            return bad(format!("f = {}", self.f));
        }
        if !(self.tilt_deg > 0.0 && self.tilt_deg <= 90.0) {
            return bad(format!("tilt_deg = {} not in (0, 90]", self.tilt_deg));
        }
        if !(self.roll_deg.abs() < 45.0) {
            return bad(format!("roll_deg = {} not in (-45, 45)", self.roll_deg));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("empty image".into());
        }
        if !(self.noise_sigma_px >= 0.0 && self.noise_sigma_px.is_finite()) {
            return bad(format!("noise_sigma_px = {}", self.noise_sigma_px));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad(format!("outlier_fraction = {}", self.outlier_fraction));
        }
        if !(self.camera_height_m > 0.0 && self.camera_height_m.is_finite()) {
            return bad(format!("camera_height_m = {}", self.camera_height_m));
        }
        if let Some(p) = self.principal_point {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return bad("principal point not finite".into());
            }
        }
        Ok(())
    }

    pub fn camera(&self) -> SyntheticCamera {
        let size = (self.image_size[0] as f64, self.image_size[1] as f64);
        let mut cam = SyntheticCamera::from_angles(self.f, size, self.tilt_deg, self.roll_deg, self.camera_height_m);
        if let Some([x, y]) = self.principal_point {
            cam.principal_point = ImagePoint::new(x, y);
        }
        cam
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneVehicle {
    pub vehicle: SyntheticVehicle,
    pub bbox: BBox,
    pub bbox_3d: [ImagePoint; 8],
    /// Observed pair: exact plus noise, or a random outlier.
    pub pair: VPPair,
    pub exact: VPPair,
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub camera: SyntheticCamera,
    pub vehicles: Vec<SceneVehicle>,
    pub measurements: Vec<DistanceMeasurement>,
    pub ground_truth: CameraCalibration,
}

impl Scene {
    pub fn pairs(&self) -> Vec<VPPair> {
        self.vehicles.iter().map(|v| v.pair).collect()
    }
}

fn sample_ground_pixel(cam: &SyntheticCamera, rng: &mut ChaCha8Rng) -> Result<(ImagePoint, Vector3<f64>), SceneError> {
    for _ in 0..SAMPLE_TRIES {
        let q = ImagePoint::new(rng.random::<f64>() * cam.image_size.0, rng.random::<f64>() * cam.image_size.1);
        if let Some(g) = cam.back_project_to_ground(q, MAX_GROUND_RANGE_M) {
            return Ok((q, g));
        }
    }
    Err(SceneError::NoVisibleGround)
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

fn add_noise(p: HomogeneousPoint2, sigma: f64, rng: &mut ChaCha8Rng) -> HomogeneousPoint2 {
    let (dx, dy) = (gaussian(rng, sigma), gaussian(rng, sigma));
    match p.dehomogenize() {
        Some(q) if sigma > 0.0 => HomogeneousPoint2::new(q.x + dx, q.y + dy, 1.0),
        _ => p,
    }
}

fn generate_vehicle(
    spec: &SceneSpec,
    cam: &SyntheticCamera,
    index: usize,
    outlier: bool,
) -> Result<SceneVehicle, SceneError> {
    let mut rng = stream_rng(spec.seed, index as u64 + 1);
    for _ in 0..SAMPLE_TRIES {
        let (_, ground) = sample_ground_pixel(cam, &mut rng)?;
        let vehicle = SyntheticVehicle {
            position: [ground.x, ground.y],
            heading: rng.random::<f64>() * std::f64::consts::TAU,
            dims: [rng.random_range(3.8..5.2), rng.random_range(1.6..2.0), rng.random_range(1.3..1.8)],
        };
        let Some(bbox_3d) = vehicle_bbox_3d(cam, &vehicle) else {
            continue;
        };
        let Some(bbox) = BBox::hull(bbox_3d.iter()) else {
            continue;
        };
        let exact = vehicle_vps(cam, &vehicle);
        let pair = if outlier {
            let (w, h) = cam.image_size;
            let mut random_point = || ImagePoint::new(rng.random_range(-w..2.0 * w), rng.random_range(-h..2.0 * h));
            let (a, b) = (random_point(), random_point());
            VPPair::from_points(a, b)
        } else {
            VPPair::new(
                add_noise(exact.first, spec.noise_sigma_px, &mut rng),
                add_noise(exact.second, spec.noise_sigma_px, &mut rng),
            )
        };
        return Ok(SceneVehicle { vehicle, bbox, bbox_3d, pair, exact, outlier });
    }
    Err(SceneError::NoVisibleGround)
}

/// Builds a scene; a pure function of `spec`. `parallel` only changes how the
/// per-vehicle work is scheduled.
pub fn generate_scene(spec: &SceneSpec, parallel: bool) -> Result<Scene, SceneError> {
    spec.validate()?;
    let cam = spec.camera();
    let n = spec.n_vehicles;
    let n_out = ((spec.outlier_fraction * n as f64).round() as usize).min(n);

    let mut scene_rng = stream_rng(spec.seed, 0);
    let mut is_outlier = vec![false; n];
    for i in sample(&mut scene_rng, n, n_out).iter() {
        is_outlier[i] = true;
    }

    let vehicles: Vec<SceneVehicle> = if parallel {
        (0..n).into_par_iter().map(|i| generate_vehicle(spec, &cam, i, is_outlier[i])).collect::<Result<_, _>>()?
    } else {
        (0..n).map(|i| generate_vehicle(spec, &cam, i, is_outlier[i])).collect::<Result<_, _>>()?
    };

    let mut meas_rng = stream_rng(spec.seed, u64::MAX);
    let mut measurements = Vec::with_capacity(spec.n_measurements);
    while measurements.len() < spec.n_measurements {
        let (a, ga) = sample_ground_pixel(&cam, &mut meas_rng)?;
        let (b, gb) = sample_ground_pixel(&cam, &mut meas_rng)?;
        let distance = (ga - gb).norm();
        if distance < 0.5 {
            continue;
        }
        measurements.push(DistanceMeasurement { a, b, distance });
    }

    Ok(Scene { spec: spec.clone(), ground_truth: cam.ground_truth(), camera: cam, vehicles, measurements })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationParams {
    /// Std of the Gaussian offset of each image corner, pixels.
    pub corner_sigma: f64,
    /// Half-width of the uniform shift of each bbox side, pixels.
    pub bbox_jitter: f64,
    pub flip_prob: f64,
    pub rng_seed: u64,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self { corner_sigma: 12.5, bbox_jitter: 5.0, flip_prob: 0.5, rng_seed: 0 }
    }
}

impl AugmentationParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.corner_sigma >= 0.0 && self.corner_sigma.is_finite())
            || !(self.bbox_jitter >= 0.0 && self.bbox_jitter.is_finite())
            || !(0.0..=1.0).contains(&self.flip_prob)
        {
            return Err(SceneError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    /// Maps original pixels to augmented pixels (warp, then optional flip).
    pub homography: Matrix3<f64>,
    pub bbox: BBox,
    pub flipped: bool,
}

impl Augmentation {
    pub fn apply(&self, p: HomogeneousPoint2) -> HomogeneousPoint2 {
        apply_homography(&self.homography, p)
    }
}

pub fn apply_homography(h: &Matrix3<f64>, p: HomogeneousPoint2) -> HomogeneousPoint2 {
    let v = h * Vector3::new(p.x, p.y, p.w);
    HomogeneousPoint2::new(v.x, v.y, v.z)
}

pub fn apply_homography_point(h: &Matrix3<f64>, p: ImagePoint) -> Option<ImagePoint> {
    apply_homography(h, p.to_homogeneous()).dehomogenize()
}

/// Homography sending each `src[k]` to `dst[k]`, normalized to `h33 = 1`.
pub fn homography_from_corners(src: &[ImagePoint; 4], dst: &[ImagePoint; 4]) -> Option<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for k in 0..4 {
        let (x, y) = (src[k].x, src[k].y);
        let (u, v) = (dst[k].x, dst[k].y);
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a.lu().solve(&b)?;
    Some(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

fn twice_area(a: ImagePoint, b: ImagePoint, c: ImagePoint) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Convex, consistently oriented, with every corner triangle of
/// non-negligible area.
fn well_formed_quad(q: &[ImagePoint; 4], min_area: f64) -> bool {
    let areas: Vec<f64> = (0..4).map(|k| twice_area(q[k], q[(k + 1) % 4], q[(k + 2) % 4])).collect();
    areas.iter().all(|&s| s > min_area) || areas.iter().all(|&s| s < -min_area)
}

/// Random perspective warp of the image corners, new 2D box from the warped
/// 3D box, per-side jitter, and an optional horizontal flip.
pub fn augment(
    image_size: (f64, f64),
    bbox_3d: &[ImagePoint; 8],
    params: &AugmentationParams,
) -> Result<Augmentation, SceneError> {
    params.validate()?;
    let (w, h) = image_size;
    if !(w > 1.0 && h > 1.0) {
        return Err(SceneError::InvalidParams(format!("image size {w}x{h}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let corners = [
        ImagePoint::new(0.0, 0.0),
        ImagePoint::new(w - 1.0, 0.0),
        ImagePoint::new(w - 1.0, h - 1.0),
        ImagePoint::new(0.0, h - 1.0),
    ];
    let min_area = 1e-3 * w * h;

    let mut warp = None;
    for _ in 0..HOMOGRAPHY_RETRIES {
        let moved = corners.map(|c| {
            ImagePoint::new(
                c.x + gaussian(&mut rng, params.corner_sigma),
                c.y + gaussian(&mut rng, params.corner_sigma),
            )
        });
        if !well_formed_quad(&moved, min_area) {
            continue;
        }
        if let Some(hm) = homography_from_corners(&corners, &moved) {
            warp = Some(hm);
            break;
        }
    }
    let warp = warp.ok_or(SceneError::DegenerateHomography(HOMOGRAPHY_RETRIES))?;

    let flipped = rng.random::<f64>() < params.flip_prob;
    let homography = if flipped { Matrix3::new(-1.0, 0.0, w - 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0) * warp } else { warp };

    let warped: Vec<ImagePoint> = bbox_3d
        .iter()
        .map(|&p| apply_homography_point(&homography, p))
        .collect::<Option<_>>()
        .ok_or_else(|| SceneError::InvalidParams("3D box maps to infinity".into()))?;
    let hull = BBox::hull(warped.iter()).ok_or_else(|| SceneError::InvalidParams("degenerate 3D box".into()))?;
    let mut jitter = || params.bbox_jitter * rng.random_range(-1.0..=1.0);
    let (x0, y0, x1, y1) = (hull.x_min + jitter(), hull.y_min + jitter(), hull.x_max + jitter(), hull.y_max + jitter());
    let bbox = BBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
        .map_err(|_| SceneError::InvalidParams("jitter collapsed the box".into()))?;

    Ok(Augmentation { homography, bbox, flipped })
}
