//! Traffic camera auto-calibration from per-vehicle pairs of orthogonal
//! vanishing points.
//!
//! Vanishing points are handled in a bounded "diamond" parametrization of the
//! projective plane ([`projective`]), exchanged as multi-scale heatmaps
//! ([`heatmap`]), and aggregated into a camera model with medians
//! ([`calibration`]). [`evaluation`] scores a calibration against known
//! distances, [`synthetic`] generates scenes with exact ground truth, and
//! [`pipeline`] ties it together over files.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod evaluation;
pub mod heatmap;
pub mod pipeline;
pub mod projective;
pub mod synthetic;

pub use calibration::{
    calibrate, calibrate_with_principal_point, CalibrationConfig, CalibrationError, CameraCalibration,
    CameraIntrinsics, VPPair,
};
pub use evaluation::{evaluate, ratio_error, CalibrationReport, DistanceMeasurement, EvaluationError, PairMode};
pub use heatmap::{
    decode_heatmap, encode_vp, encode_vp_all, select_vp, BBox, CodecError, Heatmap, HeatmapSet, ScaleSet, VPDetection,
};
pub use pipeline::{PipelineConfig, PipelineError};
pub use projective::{from_diamond, to_diamond, HomogeneousPoint2, ImagePoint, Line2};
pub use synthetic::{generate_scene, AugmentationParams, Scene, SceneSpec, SyntheticCamera};
