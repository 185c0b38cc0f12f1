//! End-to-end orchestration over files: detections in, calibration out;
//! calibration plus measurements in, error report out; scene spec in,
//! synthetic detections out.
//!
//! Every output is a deterministic function of the inputs and the config.
//! Parallel and serial scheduling produce identical bytes.

mod output;

pub use output::{to_json_line, to_json_pretty};

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    calibrate_with_principal_point, CalibrationConfig, CalibrationError, CameraCalibration, CameraIntrinsics, VPPair,
};
use crate::evaluation::{evaluate, CalibrationReport, DistanceMeasurement, EvaluationError, PairMode};
use crate::heatmap::{
    bbox_denormalize_h, bbox_normalize_h, encode_vp_all, read_heatmap_set, select_vp, BBox, CodecError,
    HeatmapFileError, HeatmapSet, ScaleSet, DEFAULT_RESOLUTION, DEFAULT_SIGMA, DEFAULT_TAU,
};
use crate::projective::{HomogeneousPoint2, ImagePoint, Line2};
use crate::synthetic::{apply_homography, augment, generate_scene, AugmentationParams, SceneError, SceneSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("input format: {0}")]
    InputFormat(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    HeatmapFile(#[from] HeatmapFileError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl PipelineError {
    /// Stable machine-readable error name.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Io { .. } | PipelineError::HeatmapFile(HeatmapFileError::Io(_)) => "IoError",
            PipelineError::InputFormat(_) | PipelineError::HeatmapFile(_) => "InputFormatError",
            PipelineError::Codec(e) => match e {
                CodecError::OutOfDiamond { .. } => "OutOfDiamond",
                CodecError::EmptyHeatmap => "EmptyHeatmap",
                CodecError::DegeneratePeak => "DegeneratePeak",
                CodecError::AllScalesDegenerate => "AllScalesDegenerate",
                _ => "InputFormatError",
            },
            PipelineError::Calibration(e) => match e {
                CalibrationError::ImaginaryFocal => "ImaginaryFocal",
                CalibrationError::NearZeroFocal(_) => "NearZeroFocal",
                CalibrationError::DirectionOnly => "DirectionOnly",
                CalibrationError::InsufficientPairs { .. } => "InsufficientPairs",
                CalibrationError::NearVerticalHorizon { .. } => "NearVerticalHorizon",
                CalibrationError::DegenerateNormal => "DegenerateNormal",
                CalibrationError::PointOnHorizon => "PointOnHorizon",
                CalibrationError::InvalidInput(_) => "InvalidInput",
            },
            PipelineError::Evaluation(e) => match e {
                EvaluationError::UnprojectablePoint => "UnprojectablePoint",
                EvaluationError::DivisionByZero => "DivisionByZero",
                EvaluationError::InsufficientMeasurements(_) => "InsufficientMeasurements",
                EvaluationError::InvalidMeasurement(_) => "InputFormatError",
            },
            PipelineError::Scene(e) => match e {
                SceneError::InvalidSpec(_) | SceneError::InvalidParams(_) => "InvalidSpec",
                SceneError::NoVisibleGround => "NoVisibleGround",
                SceneError::DegenerateHomography(_) => "DegenerateHomography",
            },
        }
    }

    /// `{"error": code, "message": text}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.code(), "message": self.to_string() }).to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Writes through a sibling temporary file so a failed run leaves no partial
/// output behind.
pub fn write_text(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PrincipalPointMode {
    /// Image center.
    Center,
    Fixed {
        x: f64,
        y: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub frame_stride: u64,
    pub max_frames: u64,
    pub max_boxes_per_frame: usize,
    pub static_iou: f64,
    pub static_min_hits: usize,
    pub tau: f64,
    pub scales: ScaleSet,
    pub min_pairs: usize,
    pub min_focal: f64,
    pub vertical_eps: f64,
    pub principal_point_mode: PrincipalPointMode,
    /// Frame size in pixels; required to place the principal point.
    pub image_size: Option<[f64; 2]>,
    pub pair_mode: PairMode,
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::video()
    }
}

impl PipelineConfig {
    /// Every tenth frame of the first 1500.
    pub fn video() -> Self {
        let cal = CalibrationConfig::default();
        Self {
            frame_stride: 10,
            max_frames: 1500,
            max_boxes_per_frame: 10,
            static_iou: 0.9,
            static_min_hits: 3,
            tau: DEFAULT_TAU,
            scales: ScaleSet::default(),
            min_pairs: cal.min_pairs,
            min_focal: cal.min_focal,
            vertical_eps: cal.vertical_eps,
            principal_point_mode: PrincipalPointMode::Center,
            image_size: None,
            pair_mode: PairMode::Ordered,
            parallel: true,
        }
    }

    /// Pre-selected frames: all of the first 5000.
    pub fn frame_folder() -> Self {
        Self { frame_stride: 1, max_frames: 5000, ..Self::video() }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InputFormat(format!("config: {m}")));
        if self.frame_stride == 0 || self.max_frames == 0 || self.max_boxes_per_frame == 0 {
            return bad("frame_stride, max_frames and max_boxes_per_frame must be positive");
        }
        if self.static_min_hits == 0 || !(self.static_iou > 0.0 && self.static_iou <= 1.0) {
            return bad("static_min_hits must be positive and static_iou in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.min_pairs == 0 {
            return bad("min_pairs must be positive");
        }
        if let Some([w, h]) = self.image_size {
            if !(w > 0.0 && h > 0.0) {
                return bad("image_size must be positive");
            }
        }
        Ok(())
    }

    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig { min_pairs: self.min_pairs, min_focal: self.min_focal, vertical_eps: self.vertical_eps }
    }

    pub fn principal_point(&self) -> Result<ImagePoint, PipelineError> {
        match self.principal_point_mode {
            PrincipalPointMode::Fixed { x, y } => Ok(ImagePoint::new(x, y)),
            PrincipalPointMode::Center => match self.image_size {
                Some([w, h]) => Ok(ImagePoint::new(w / 2.0, h / 2.0)),
                None => Err(PipelineError::InputFormat(
                    "config: image_size is required to place the principal point".into(),
                )),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(&read_text(path)?)
            .map_err(|e| PipelineError::InputFormat(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A vanishing point in box-normalized coordinates: `[x, y]` or `[x, y, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VpValue {
    Cartesian([f64; 2]),
    Homogeneous([f64; 3]),
}

impl VpValue {
    pub fn point(&self) -> HomogeneousPoint2 {
        match *self {
            VpValue::Cartesian([x, y]) => HomogeneousPoint2::new(x, y, 1.0),
            VpValue::Homogeneous([x, y, w]) => HomogeneousPoint2::new(x, y, w),
        }
    }

    fn from_point(p: HomogeneousPoint2) -> Self {
        match p.dehomogenize() {
            Some(q) => VpValue::Cartesian([q.x, q.y]),
            None => VpValue::Homogeneous([p.x, p.y, 0.0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectionPayload {
    Points {
        vp_first: VpValue,
        vp_second: VpValue,
    },
    /// Path to a heatmap file, relative to the detections file.
    Heatmaps {
        heatmaps: String,
    },
}

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: u64,
    /// `[x_min, y_min, x_max, y_max]` in frame pixels.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub confidence: f64,
    #[serde(flatten)]
    pub payload: DetectionPayload,
}

impl DetectionRecord {
    pub fn bbox(&self) -> Result<BBox, CodecError> {
        let [a, b, c, d] = self.bbox;
        BBox::new(a, b, c, d)
    }
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let rec: DetectionRecord = serde_json::from_str(line)
                .map_err(|e| PipelineError::InputFormat(format!("detections line {}: {e}", n + 1)))?;
            if !(0.0..=1.0).contains(&rec.confidence) {
                return Err(PipelineError::InputFormat(format!(
                    "detections line {}: confidence {} outside [0, 1]",
                    n + 1,
                    rec.confidence
                )));
            }
            rec.bbox().map_err(|e| PipelineError::InputFormat(format!("detections line {}: {e}", n + 1)))?;
            Ok(rec)
        })
        .collect()
}

/// Frame sampling, per-frame top-k by confidence, and static-vehicle
/// suppression.
///
/// A kept box continues a chain when its best IoU with a box of the previous
/// sampled frame exceeds `static_iou`; a box whose chain is longer than
/// `static_min_hits` is considered parked and dropped. The result is a
/// subsequence of `records`.
pub fn filter_detections(records: &[DetectionRecord], cfg: &PipelineConfig) -> Vec<DetectionRecord> {
    let mut by_frame: Vec<(u64, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<u64, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.frame_index % cfg.frame_stride != 0 || r.frame_index >= cfg.max_frames {
            continue;
        }
        let k = *slot.entry(r.frame_index).or_insert_with(|| {
            by_frame.push((r.frame_index, Vec::new()));
            by_frame.len() - 1
        });
        by_frame[k].1.push(i);
    }
    by_frame.sort_by_key(|(f, _)| *f);

    let mut keep = vec![false; records.len()];
    let mut prev: Option<(u64, Vec<(BBox, usize)>)> = None;
    for (frame, mut idx) in by_frame {
        idx.sort_by(|&a, &b| records[b].confidence.total_cmp(&records[a].confidence).then(a.cmp(&b)));
        idx.truncate(cfg.max_boxes_per_frame);

        let continues = prev.as_ref().filter(|(f, _)| f + cfg.frame_stride == frame);
        let mut current = Vec::with_capacity(idx.len());
        for i in idx {
            let Ok(bbox) = records[i].bbox() else { continue };
            let hits = continues
                .and_then(|(_, boxes)| {
                    boxes.iter().filter(|(b, _)| b.iou(&bbox) > cfg.static_iou).map(|&(_, h)| h).max()
                })
                .map_or(1, |h| h + 1);
            keep[i] = hits <= cfg.static_min_hits;
            current.push((bbox, hits));
        }
        prev = Some((frame, current));
    }

    records.iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r.clone()).collect()
}

/// Decodes one record into a frame-pixel VP pair.
pub fn decode_record(rec: &DetectionRecord, base_dir: &Path, tau: f64) -> Result<VPPair, PipelineError> {
    let bbox = rec.bbox()?;
    match &rec.payload {
        DetectionPayload::Points { vp_first, vp_second } => {
            Ok(VPPair::new(bbox_denormalize_h(vp_first.point(), &bbox), bbox_denormalize_h(vp_second.point(), &bbox)))
        }
        DetectionPayload::Heatmaps { heatmaps } => {
            let path = base_dir.join(heatmaps);
            let set = read_heatmap_set(&path).map_err(|e| match e {
                HeatmapFileError::Io(source) => PipelineError::Io { path: path.clone(), source },
                e => PipelineError::InputFormat(format!("{}: {e}", path.display())),
            })?;
            if set.channels.len() < 2 {
                return Err(PipelineError::InputFormat(format!(
                    "{heatmaps}: expected 2 vanishing point channels, found {}",
                    set.channels.len()
                )));
            }
            let first = select_vp(&set.channels[0], &bbox, tau)?;
            let second = select_vp(&set.channels[1], &bbox, tau)?;
            Ok(VPPair::new(first.point, second.point))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineCounts {
    pub detections: usize,
    pub kept: usize,
    pub decode_failed: usize,
    pub pairs_used: usize,
    pub pairs_rejected: usize,
}

/// Calibration output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub f: f64,
    pub principal_point: [f64; 2],
    pub horizon: [f64; 3],
    pub normal: [f64; 3],
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<PipelineCounts>,
}

impl CalibrationFile {
    pub fn new(cal: &CameraCalibration, counts: Option<PipelineCounts>) -> Self {
        let p = cal.intrinsics.principal_point;
        Self {
            f: cal.intrinsics.f,
            principal_point: [p.x, p.y],
            horizon: cal.horizon.as_array(),
            normal: cal.plane_normal,
            delta: cal.delta,
            counts,
        }
    }

    pub fn calibration(&self) -> Result<CameraCalibration, PipelineError> {
        let n = self.normal;
        let n_norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if !(self.f > 0.0 && self.f.is_finite()) || !(n_norm > 0.0 && n_norm.is_finite()) || !(self.delta > 0.0) {
            return Err(PipelineError::InputFormat("calibration: f, normal and delta must be valid".into()));
        }
        let counts = self.counts.unwrap_or(PipelineCounts {
            detections: 0,
            kept: 0,
            decode_failed: 0,
            pairs_used: 0,
            pairs_rejected: 0,
        });
        Ok(CameraCalibration {
            intrinsics: CameraIntrinsics { f: self.f, principal_point: self.principal_point.into() },
            horizon: Line2::new(self.horizon[0], self.horizon[1], self.horizon[2]),
            plane_normal: [n[0] / n_norm, n[1] / n_norm, n[2] / n_norm],
            delta: self.delta,
            n_pairs_used: counts.pairs_used,
            n_pairs_rejected: counts.pairs_rejected,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRun {
    pub calibration: CameraCalibration,
    pub counts: PipelineCounts,
}

impl CalibrationRun {
    pub fn to_json(&self) -> String {
        to_json_pretty(&CalibrationFile::new(&self.calibration, Some(self.counts)))
    }
}

/// Filtered, decoded, calibrated. Records that fail to decode are counted and
/// skipped; too few surviving pairs is an error.
pub fn calibrate_records(
    records: &[DetectionRecord],
    base_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<CalibrationRun, PipelineError> {
    cfg.validate()?;
    let p = cfg.principal_point()?;
    let kept = filter_detections(records, cfg);
    let decode = |r: &DetectionRecord| decode_record(r, base_dir, cfg.tau);
    let decoded: Vec<Result<VPPair, PipelineError>> =
        if cfg.parallel { kept.par_iter().map(decode).collect() } else { kept.iter().map(decode).collect() };
    let mut pairs = Vec::with_capacity(decoded.len());
    let mut decode_failed = 0;
    for d in decoded {
        match d {
            Ok(pair) => pairs.push(pair),
            // unreadable heatmap files are input errors, not detector misses
            Err(e @ (PipelineError::Io { .. } | PipelineError::HeatmapFile(_) | PipelineError::InputFormat(_))) => {
                return Err(e)
            }
            Err(_) => decode_failed += 1,
        }
    }
    let calibration = calibrate_with_principal_point(&pairs, p, &cfg.calibration())?;
    Ok(CalibrationRun {
        counts: PipelineCounts {
            detections: records.len(),
            kept: kept.len(),
            decode_failed,
            pairs_used: calibration.n_pairs_used,
            pairs_rejected: calibration.n_pairs_rejected,
        },
        calibration,
    })
}

pub fn run_calibration(detections_path: &Path, cfg: &PipelineConfig) -> Result<CalibrationRun, PipelineError> {
    let records = parse_detections(&read_text(detections_path)?)?;
    let base = detections_path.parent().unwrap_or(Path::new("."));
    calibrate_records(&records, base, cfg)
}

pub fn load_calibration(path: &Path) -> Result<CameraCalibration, PipelineError> {
    let file: CalibrationFile = serde_json::from_str(&read_text(path)?)
        .map_err(|e| PipelineError::InputFormat(format!("{}: {e}", path.display())))?;
    file.calibration()
}

pub fn load_measurements(path: &Path) -> Result<Vec<DistanceMeasurement>, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PipelineError::InputFormat(format!("{}: {e}", path.display())))
}

pub fn run_evaluation(
    calibration_path: &Path,
    measurements_path: &Path,
    cfg: &PipelineConfig,
) -> Result<CalibrationReport, PipelineError> {
    let cal = load_calibration(calibration_path)?;
    let ms = load_measurements(measurements_path)?;
    Ok(evaluate(&ms, &cal, cfg.pair_mode)?)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    pair_mode: PairMode,
    mean_error_percent: f64,
    n_measurements: usize,
    n_skipped: usize,
    n_pairs: usize,
    per_pair_errors: &'a [crate::evaluation::PairError],
}

pub fn report_json(report: &CalibrationReport) -> String {
    to_json_pretty(&ReportFile {
        pair_mode: report.pair_mode,
        mean_error_percent: report.mean_error_percent(),
        n_measurements: report.n_measurements,
        n_skipped: report.n_skipped,
        n_pairs: report.per_pair_errors.len(),
        per_pair_errors: &report.per_pair_errors,
    })
}

pub fn report_table(report: &CalibrationReport) -> String {
    let mode = match report.pair_mode {
        PairMode::Ordered => "ordered",
        PairMode::UnorderedMin => "unordered-min",
        PairMode::UnorderedFirst => "unordered-first",
    };
    format!(
        "measurements  {}\nskipped       {}\npairs         {} ({mode})\nmean error    {:.2} %\n",
        report.n_measurements,
        report.n_skipped,
        report.per_pair_errors.len(),
        report.mean_error_percent(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    /// Also write per-vehicle heatmap files and reference them instead of
    /// embedding the points.
    pub heatmaps: bool,
    pub parallel: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { heatmaps: false, parallel: true }
    }
}

const VEHICLES_PER_FRAME: usize = 5;
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const MEASUREMENTS_FILE: &str = "measurements.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const CONFIG_FILE: &str = "config.json";
const HEATMAP_DIR: &str = "heatmaps";

/// In-memory synth output: file name (relative to the output dir) and bytes.
pub fn synth_files(spec: &SceneSpec, opts: SynthOptions) -> Result<Vec<(String, Vec<u8>)>, PipelineError> {
    let scene = generate_scene(spec, opts.parallel)?;
    let scales = ScaleSet::default();
    let mut files = Vec::new();

    let encode = |k: usize| -> Result<Option<(String, Vec<u8>)>, PipelineError> {
        if !opts.heatmaps {
            return Ok(None);
        }
        let v = &scene.vehicles[k];
        let channels = [v.pair.first, v.pair.second]
            .iter()
            .map(|vp| encode_vp_all(bbox_normalize_h(*vp, &v.bbox), &scales, DEFAULT_RESOLUTION, DEFAULT_SIGMA))
            .collect::<Result<Vec<_>, _>>()?;
        let set = HeatmapSet::new(DEFAULT_RESOLUTION, scales.clone(), channels)?;
        Ok(Some((format!("{HEATMAP_DIR}/vehicle_{k:05}.dvp"), set.to_bytes())))
    };
    let heatmap_files: Vec<Option<(String, Vec<u8>)>> = if opts.parallel {
        (0..scene.vehicles.len()).into_par_iter().map(encode).collect::<Result<_, _>>()?
    } else {
        (0..scene.vehicles.len()).map(encode).collect::<Result<_, _>>()?
    };

    let mut lines = String::new();
    for (k, (v, hm)) in scene.vehicles.iter().zip(&heatmap_files).enumerate() {
        let payload = match hm {
            Some((name, _)) => DetectionPayload::Heatmaps { heatmaps: name.clone() },
            None => DetectionPayload::Points {
                vp_first: VpValue::from_point(bbox_normalize_h(v.pair.first, &v.bbox)),
                vp_second: VpValue::from_point(bbox_normalize_h(v.pair.second, &v.bbox)),
            },
        };
        let rec = DetectionRecord {
            frame_index: 10 * (k / VEHICLES_PER_FRAME) as u64,
            bbox: [v.bbox.x_min, v.bbox.y_min, v.bbox.x_max, v.bbox.y_max],
            confidence: 1.0 - 0.01 * (k % VEHICLES_PER_FRAME) as f64,
            payload,
        };
        lines.push_str(&to_json_line(&rec));
        lines.push('\n');
    }
    files.push((DETECTIONS_FILE.to_string(), lines.into_bytes()));
    files.extend(heatmap_files.into_iter().flatten());
    files.push((MEASUREMENTS_FILE.to_string(), to_json_pretty(&scene.measurements).into_bytes()));
    files.push((
        GROUND_TRUTH_FILE.to_string(),
        to_json_pretty(&CalibrationFile::new(&scene.ground_truth, None)).into_bytes(),
    ));

    let frames = (scene.vehicles.len().div_ceil(VEHICLES_PER_FRAME) as u64 * 10).max(1);
    let mut cfg = PipelineConfig {
        image_size: Some([spec.image_size[0] as f64, spec.image_size[1] as f64]),
        max_frames: PipelineConfig::video().max_frames.max(frames),
        ..PipelineConfig::video()
    };
    if let Some([x, y]) = spec.principal_point {
        cfg.principal_point_mode = PrincipalPointMode::Fixed { x, y };
    }
    files.push((CONFIG_FILE.to_string(), to_json_pretty(&cfg).into_bytes()));
    Ok(files)
}

/// Writes the synth files under `out_dir`. Nothing is written if generation
/// fails.
pub fn run_synth(spec: &SceneSpec, out_dir: &Path, opts: SynthOptions) -> Result<Vec<PathBuf>, PipelineError> {
    let files = synth_files(spec, opts)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = out_dir.join(&name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_scene_spec(path: &Path) -> Result<SceneSpec, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PipelineError::InputFormat(format!("{}: {e}", path.display())))
}

/// Input of the `augment` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub image_size: [f64; 2],
    pub bbox_3d: [[f64; 2]; 8],
    /// Points carried through each transform, `[x, y, w]`.
    #[serde(default)]
    pub vps: Vec<[f64; 3]>,
    #[serde(default)]
    pub params: AugmentationParams,
    /// Sample `k` uses seed `params.rng_seed + k`.
    #[serde(default = "one")]
    pub samples: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSample {
    pub seed: u64,
    pub homography: [[f64; 3]; 3],
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub flipped: bool,
    pub vps: Vec<[f64; 3]>,
}

pub fn run_augment(spec: &AugmentSpec) -> Result<Vec<AugmentSample>, PipelineError> {
    let bbox_3d = spec.bbox_3d.map(ImagePoint::from);
    (0..spec.samples)
        .map(|k| {
            let seed = spec.params.rng_seed.wrapping_add(k as u64);
            let params = AugmentationParams { rng_seed: seed, ..spec.params };
            let aug = augment((spec.image_size[0], spec.image_size[1]), &bbox_3d, &params)?;
            let h = aug.homography;
            let vps = spec
                .vps
                .iter()
                .map(|&[x, y, w]| {
                    let p = apply_homography(&h, HomogeneousPoint2::new(x, y, w));
                    match p.dehomogenize() {
                        Some(q) => [q.x, q.y, 1.0],
                        None => [p.x, p.y, 0.0],
                    }
                })
                .collect();
            Ok(AugmentSample {
                seed,
                homography: [
                    [h[(0, 0)], h[(0, 1)], h[(0, 2)]],
                    [h[(1, 0)], h[(1, 1)], h[(1, 2)]],
                    [h[(2, 0)], h[(2, 1)], h[(2, 2)]],
                ],
                bbox: [aug.bbox.x_min, aug.bbox.y_min, aug.bbox.x_max, aug.bbox.y_max],
                flipped: aug.flipped,
                vps,
            })
        })
        .collect()
}

pub fn load_augment_spec(path: &Path) -> Result<AugmentSpec, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PipelineError::InputFormat(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(frame: u64, bbox: [f64; 4], confidence: f64) -> DetectionRecord {
        DetectionRecord {
            frame_index: frame,
            bbox,
            confidence,
            payload: DetectionPayload::Points {
                vp_first: VpValue::Cartesian([10.0, 0.5]),
                vp_second: VpValue::Cartesian([-8.0, 0.2]),
            },
        }
    }

    fn moving(frame: u64) -> DetectionRecord {
        let x = frame as f64 * 7.0;
        rec(frame, [x, 0.0, x + 50.0, 30.0], 0.9)
    }

    #[test]
    fn stride_sampling() {
        let records: Vec<_> = (0..100).map(moving).collect();
        let kept = filter_detections(&records, &PipelineConfig::video());
        let frames: Vec<u64> = kept.iter().map(|r| r.frame_index).collect();
        assert_eq!(frames, (0..10).map(|k| 10 * k).collect::<Vec<_>>());
    }

    #[test]
    fn max_frames_cut() {
        let records: Vec<_> = (0..200).map(|k| moving(10 * k)).collect();
        let cfg = PipelineConfig { max_frames: 500, ..PipelineConfig::video() };
        assert_eq!(filter_detections(&records, &cfg).len(), 50);
        let ff = PipelineConfig::frame_folder();
        assert_eq!((ff.frame_stride, ff.max_frames), (1, 5000));
    }

    #[test]
    fn top_ten_by_confidence() {
        let records: Vec<_> = (0..12)
            .map(|k| rec(0, [100.0 * k as f64, 0.0, 100.0 * k as f64 + 50.0, 40.0], 0.5 + 0.01 * ((k * 7) % 12) as f64))
            .collect();
        let kept = filter_detections(&records, &PipelineConfig::video());
        assert_eq!(kept.len(), 10);
        let mut confs: Vec<f64> = records.iter().map(|r| r.confidence).collect();
        confs.sort_by(|a, b| b.total_cmp(a));
        for r in &kept {
            assert!(r.confidence >= confs[9]);
        }
    }

    #[test]
    fn static_boxes_dropped_after_min_hits() {
        let parked = [500.0, 500.0, 600.0, 560.0];
        let records: Vec<_> = (0..5).map(|k| rec(10 * k, parked, 0.8)).collect();
        let kept = filter_detections(&records, &PipelineConfig::video());
        let frames: Vec<u64> = kept.iter().map(|r| r.frame_index).collect();
        assert_eq!(frames, vec![0, 10, 20]);
    }

    #[test]
    fn static_chain_breaks_on_gap() {
        let parked = [500.0, 500.0, 600.0, 560.0];
        let records: Vec<_> = [0, 10, 20, 40, 50].iter().map(|&f| rec(f, parked, 0.8)).collect();
        assert_eq!(filter_detections(&records, &PipelineConfig::video()).len(), 5);
    }

    #[test]
    fn filter_output_is_subsequence() {
        let mut records: Vec<_> = (0..40).map(|k| moving(5 * k)).collect();
        records.swap(3, 17);
        let kept = filter_detections(&records, &PipelineConfig::video());
        let mut it = records.iter();
        for k in &kept {
            assert!(it.any(|r| r == k));
        }
    }

    #[test]
    fn detection_line_formats() {
        let text = concat!(
            r#"{"frame_index":0,"box":[0,0,10,10],"confidence":0.5,"vp_first":[1,2],"vp_second":[3,4,0]}"#,
            "\n\n",
            r#"{"frame_index":10,"box":[0,0,10,10],"confidence":0.5,"heatmaps":"a.dvp"}"#,
            "\n"
        );
        let recs = parse_detections(text).unwrap();
        assert_eq!(recs.len(), 2);
        match &recs[0].payload {
            DetectionPayload::Points { vp_second, .. } => assert!(vp_second.point().is_ideal()),
            _ => panic!(),
        }
        assert_eq!(recs[1].payload, DetectionPayload::Heatmaps { heatmaps: "a.dvp".into() });

        assert!(parse_detections(r#"{"frame_index":0}"#).is_err());
        assert!(parse_detections(r#"{"frame_index":0,"box":[5,0,1,10],"confidence":0.5,"heatmaps":"a"}"#).is_err());
        assert!(parse_detections(r#"{"frame_index":0,"box":[0,0,1,10],"confidence":1.5,"heatmaps":"a"}"#).is_err());
    }

    #[test]
    fn record_serialization_round_trips() {
        let r = rec(30, [1.5, 2.0, 80.25, 40.0], 0.75);
        let line = to_json_line(&r);
        assert!(line.contains("\"box\":["));
        assert_eq!(parse_detections(&line).unwrap(), vec![r]);
    }

    #[test]
    fn config_requires_image_size_for_center() {
        let cfg = PipelineConfig::video();
        assert!(cfg.principal_point().is_err());
        let cfg = PipelineConfig { image_size: Some([1920.0, 1080.0]), ..cfg };
        assert_eq!(cfg.principal_point().unwrap(), ImagePoint::new(960.0, 540.0));
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"principal_point_mode":{"mode":"fixed","x":1.0,"y":2.0},"tau":0.7}"#).unwrap();
        assert_eq!(cfg.principal_point().unwrap(), ImagePoint::new(1.0, 2.0));
        assert_eq!(cfg.frame_stride, 10);
        assert!(PipelineConfig { tau: 1.5, ..PipelineConfig::video() }.validate().is_err());
    }

    #[test]
    fn error_codes() {
        let e = PipelineError::from(CalibrationError::InsufficientPairs { found: 0, needed: 5 });
        assert_eq!(e.code(), "InsufficientPairs");
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "InsufficientPairs");
        assert_eq!(PipelineError::InputFormat("x".into()).code(), "InputFormatError");
    }
}
