//! Scale-free calibration error from ground-truth distance measurements.
//!
//! For measurements `i`, `j` with ground-truth lengths `D_i`, `D_j` and
//! lengths `d_i`, `d_j` measured on the calibrated plane,
//! `r_ij = |D_i/D_j - d_i/d_j| / (D_i/D_j)`. The plane scale cancels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{project_to_plane, CameraCalibration};
use crate::projective::ImagePoint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationError {
    #[error("measurement endpoint cannot be projected onto the road plane")]
    UnprojectablePoint,
    #[error("division by zero in ratio error")]
    DivisionByZero,
    #[error("need at least 2 projectable measurements, have {0}")]
    InsufficientMeasurements(usize),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
}

/// Two road points in frame pixels and their true distance in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceMeasurement {
    #[serde(with = "point_array")]
    pub a: ImagePoint,
    #[serde(with = "point_array")]
    pub b: ImagePoint,
    pub distance: f64,
}

impl DistanceMeasurement {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        if !(self.a.is_finite() && self.b.is_finite()) || self.a == self.b {
            return Err(EvaluationError::InvalidMeasurement(format!("endpoints {:?} {:?}", self.a, self.b)));
        }
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(EvaluationError::InvalidMeasurement(format!("distance {}", self.distance)));
        }
        Ok(())
    }
}

mod point_array {
    use super::ImagePoint;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &ImagePoint, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ImagePoint, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(ImagePoint::new(x, y))
    }
}

/// Which index pairs enter the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// Every `(i, j)` with `i != j`.
    #[default]
    Ordered,
    /// `min(r_ij, r_ji)` for each `i < j`.
    UnorderedMin,
    /// `r_ij` for each `i < j`.
    UnorderedFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub i: usize,
    pub j: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub pair_mode: PairMode,
    pub per_pair_errors: Vec<PairError>,
    /// Mean of `r` as a fraction.
    pub mean_error: f64,
    pub n_measurements: usize,
    pub n_skipped: usize,
}

impl CalibrationReport {
    pub fn mean_error_percent(&self) -> f64 {
        100.0 * self.mean_error
    }
}

/// Length of a measurement on the calibrated plane.
pub fn measured_distance(m: &DistanceMeasurement, cal: &CameraCalibration) -> Result<f64, EvaluationError> {
    let a = project_to_plane(m.a, cal).map_err(|_| EvaluationError::UnprojectablePoint)?;
    let b = project_to_plane(m.b, cal).map_err(|_| EvaluationError::UnprojectablePoint)?;
    Ok((a - b).norm())
}

pub fn ratio_error(d_i: f64, d_j: f64, truth_i: f64, truth_j: f64) -> Result<f64, EvaluationError> {
    if d_j == 0.0 || truth_j == 0.0 || truth_i == 0.0 {
        return Err(EvaluationError::DivisionByZero);
    }
    let expected = truth_i / truth_j;
    Ok((d_i / d_j - expected).abs() / expected)
}

/// Mean ratio error over measurement pairs. Measurements whose endpoints do
/// not project are skipped and counted; indices in the report refer to the
/// input list.
pub fn evaluate(
    measurements: &[DistanceMeasurement],
    cal: &CameraCalibration,
    mode: PairMode,
) -> Result<CalibrationReport, EvaluationError> {
    for m in measurements {
        m.validate()?;
    }
    let projected: Vec<(usize, f64, f64)> = measurements
        .iter()
        .enumerate()
        .filter_map(|(i, m)| measured_distance(m, cal).ok().map(|d| (i, d, m.distance)))
        .collect();
    let n_skipped = measurements.len() - projected.len();
    if projected.len() < 2 {
        return Err(EvaluationError::InsufficientMeasurements(projected.len()));
    }

    let mut per_pair_errors = Vec::new();
    for (a, &(i, d_i, t_i)) in projected.iter().enumerate() {
        for (b, &(j, d_j, t_j)) in projected.iter().enumerate() {
            let take = match mode {
                PairMode::Ordered => a != b,
                PairMode::UnorderedMin | PairMode::UnorderedFirst => a < b,
            };
            if !take {
                continue;
            }
            let mut r = ratio_error(d_i, d_j, t_i, t_j)?;
            if mode == PairMode::UnorderedMin {
                r = r.min(ratio_error(d_j, d_i, t_j, t_i)?);
            }
            per_pair_errors.push(PairError { i, j, r });
        }
    }
    let mean_error = per_pair_errors.iter().map(|e| e.r).sum::<f64>() / per_pair_errors.len() as f64;
    Ok(CalibrationReport {
        pair_mode: mode,
        per_pair_errors,
        mean_error,
        n_measurements: measurements.len(),
        n_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::CameraIntrinsics;
    use crate::projective::Line2;

    fn fronto(f: f64) -> CameraCalibration {
        CameraCalibration {
            intrinsics: CameraIntrinsics { f, principal_point: ImagePoint::new(0.0, 0.0) },
            horizon: Line2::LINE_AT_INFINITY,
            plane_normal: [0.0, 0.0, 1.0],
            delta: 1.0,
            n_pairs_used: 0,
            n_pairs_rejected: 0,
        }
    }

    fn m(a: (f64, f64), b: (f64, f64), d: f64) -> DistanceMeasurement {
        DistanceMeasurement { a: ImagePoint::new(a.0, a.1), b: ImagePoint::new(b.0, b.1), distance: d }
    }

    #[test]
    fn ratio_error_examples() {
        assert!((ratio_error(2.2, 4.0, 2.0, 4.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(ratio_error(3.0, 5.0, 3.0, 5.0).unwrap(), 0.0);
        for k in [0.1, 1.0, 7.0] {
            assert!((ratio_error(2.2 * k, 4.0 * k, 2.0, 4.0).unwrap() - 0.1).abs() < 1e-14);
        }
        assert_eq!(ratio_error(1.0, 0.0, 1.0, 1.0), Err(EvaluationError::DivisionByZero));
    }

    #[test]
    fn fronto_parallel_distance_is_pixel_distance_over_f() {
        let cal = fronto(250.0);
        let d = measured_distance(&m((10.0, 20.0), (40.0, 60.0), 1.0), &cal).unwrap();
        assert!((d - 50.0 / 250.0).abs() < 1e-15);
    }

    #[test]
    fn points_on_horizon_are_skipped() {
        let cal = CameraCalibration { plane_normal: [0.0, -1.0, 0.0], ..fronto(100.0) };
        let near = measured_distance(&m((0.0, 1e-6), (5.0, 1e-6), 1.0), &cal).unwrap();
        assert!(near.is_finite() && near > 1e3);
        assert_eq!(measured_distance(&m((0.0, 0.0), (5.0, 0.0), 1.0), &cal), Err(EvaluationError::UnprojectablePoint));
        let ms = [m((0.0, 10.0), (5.0, 10.0), 1.0), m((0.0, 0.0), (5.0, 0.0), 1.0), m((0.0, 20.0), (5.0, 20.0), 0.5)];
        let report = evaluate(&ms, &cal, PairMode::Ordered).unwrap();
        assert_eq!(report.n_skipped, 1);
        assert_eq!(report.per_pair_errors.len(), 2);
        assert_eq!((report.per_pair_errors[0].i, report.per_pair_errors[0].j), (0, 2));
    }

    #[test]
    fn two_measurements_two_ordered_pairs() {
        let cal = fronto(100.0);
        let ms = [m((0.0, 0.0), (10.0, 0.0), 2.0), m((0.0, 5.0), (0.0, 25.0), 4.0)];
        let report = evaluate(&ms, &cal, PairMode::Ordered).unwrap();
        assert_eq!(report.per_pair_errors.len(), 2);
        assert!(report.mean_error.abs() < 1e-15);
        let report = evaluate(&ms, &cal, PairMode::UnorderedFirst).unwrap();
        assert_eq!(report.per_pair_errors.len(), 1);
    }

    #[test]
    fn pair_modes_differ_as_documented() {
        let cal = fronto(100.0);
        // measured ratio 1, true ratio 2 / 1: r_01 = 0.5, r_10 = 1
        let ms = [m((0.0, 0.0), (10.0, 0.0), 2.0), m((0.0, 0.0), (0.0, 10.0), 1.0)];
        let ord = evaluate(&ms, &cal, PairMode::Ordered).unwrap();
        assert!((ord.mean_error - 0.75).abs() < 1e-15);
        let first = evaluate(&ms, &cal, PairMode::UnorderedFirst).unwrap();
        assert!((first.mean_error - 0.5).abs() < 1e-15);
        let min = evaluate(&ms, &cal, PairMode::UnorderedMin).unwrap();
        assert!((min.mean_error - 0.5).abs() < 1e-15);
        assert!((ord.mean_error_percent() - 75.0).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_delta_and_relabeling() {
        let ms = [m((0.0, 0.0), (10.0, 3.0), 2.0), m((4.0, 5.0), (0.0, 25.0), 4.5), m((-30.0, 8.0), (12.0, -9.0), 1.0)];
        let cal = CameraCalibration { plane_normal: [0.1, -0.3, 0.9], ..fronto(300.0) };
        let base = evaluate(&ms, &cal, PairMode::Ordered).unwrap().mean_error;
        assert!(base > 0.0);
        for k in [0.1, 7.0] {
            let scaled = CameraCalibration { delta: k, ..cal };
            let e = evaluate(&ms, &scaled, PairMode::Ordered).unwrap().mean_error;
            assert!((e - base).abs() < 1e-12);
        }
        let relabeled = [ms[2], ms[0], ms[1]];
        let e = evaluate(&relabeled, &cal, PairMode::Ordered).unwrap().mean_error;
        assert!((e - base).abs() < 1e-12);
    }

    #[test]
    fn too_few_measurements() {
        let cal = fronto(100.0);
        assert_eq!(
            evaluate(&[m((0.0, 0.0), (1.0, 0.0), 1.0)], &cal, PairMode::Ordered),
            Err(EvaluationError::InsufficientMeasurements(1))
        );
        assert!(matches!(
            evaluate(&[m((0.0, 0.0), (0.0, 0.0), 1.0)], &cal, PairMode::Ordered),
            Err(EvaluationError::InvalidMeasurement(_))
        ));
    }

    #[test]
    fn measurement_json_shape() {
        let ms: Vec<DistanceMeasurement> =
            serde_json::from_str(r#"[{"a":[1.0,2.0],"b":[3,4],"distance":5.5}]"#).unwrap();
        assert_eq!(ms[0], m((1.0, 2.0), (3.0, 4.0), 5.5));
    }
}
