use std::fs;

use vpcalib::heatmap::{encode_vp_all, write_heatmap_set, Heatmap, HeatmapSet, ScaleSet, DEFAULT_RESOLUTION};
use vpcalib::pipeline::{
    calibrate_records, load_calibration, parse_detections, run_calibration, run_evaluation, run_synth, to_json_line,
    DetectionPayload, DetectionRecord, PipelineConfig, SynthOptions, VpValue, CONFIG_FILE, DETECTIONS_FILE,
    GROUND_TRUTH_FILE, MEASUREMENTS_FILE,
};
use vpcalib::projective::HomogeneousPoint2;
use vpcalib::synthetic::SceneSpec;

fn spec() -> SceneSpec {
    SceneSpec { seed: 21, n_vehicles: 60, f: 1100.0, tilt_deg: 22.0, roll_deg: -3.0, ..SceneSpec::default() }
}

#[test]
fn heatmap_scene_calibrates_close_to_truth() {
    let dir = tempfile::tempdir().unwrap();
    run_synth(&spec(), dir.path(), SynthOptions { heatmaps: true, parallel: true }).unwrap();
    let cfg = PipelineConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
    let run = run_calibration(&dir.path().join(DETECTIONS_FILE), &cfg).unwrap();
    let truth = load_calibration(&dir.path().join(GROUND_TRUTH_FILE)).unwrap();

    let f_err = (run.calibration.intrinsics.f - truth.intrinsics.f).abs() / truth.intrinsics.f;
    assert!(f_err < 0.01, "focal error {f_err}");
    let angle = run.calibration.normal().dot(&truth.normal()).clamp(-1.0, 1.0).acos().to_degrees();
    assert!(angle < 0.5, "normal off by {angle} deg");
    assert_eq!(run.counts.detections, 60);
    assert_eq!(run.counts.decode_failed, 0);

    let cal_path = dir.path().join("cal.json");
    fs::write(&cal_path, run.to_json()).unwrap();
    let report = run_evaluation(&cal_path, &dir.path().join(MEASUREMENTS_FILE), &cfg).unwrap();
    assert!(report.mean_error < 0.02, "{}", report.mean_error);
}

#[test]
fn calibration_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    run_synth(&spec(), dir.path(), SynthOptions::default()).unwrap();
    let cfg = PipelineConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
    let run = run_calibration(&dir.path().join(DETECTIONS_FILE), &cfg).unwrap();
    let path = dir.path().join("cal.json");
    fs::write(&path, run.to_json()).unwrap();
    let back = load_calibration(&path).unwrap();
    assert_eq!(back.intrinsics, run.calibration.intrinsics);
    assert_eq!(back.horizon, run.calibration.horizon);
    assert_eq!(back.delta, run.calibration.delta);
    for (a, b) in back.plane_normal.iter().zip(run.calibration.plane_normal) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(back.n_pairs_used, run.counts.pairs_used);
}

fn record(frame: u64, bbox: [f64; 4], payload: DetectionPayload) -> DetectionRecord {
    DetectionRecord { frame_index: frame, bbox, confidence: 0.9, payload }
}

#[test]
fn undecodable_heatmaps_are_counted_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let scales = ScaleSet::default();
    let empty: Vec<Heatmap> = scales.as_slice().iter().map(|&s| Heatmap::zeros(DEFAULT_RESOLUTION, s)).collect();
    let empty_set = HeatmapSet::new(DEFAULT_RESOLUTION, scales.clone(), vec![empty.clone(), empty]).unwrap();
    write_heatmap_set(&dir.path().join("empty.dvp"), &empty_set).unwrap();

    // a few exact pairs from a known camera, plus the empty one, plus a JSON heatmap file
    let scene = vpcalib::synthetic::generate_scene(&SceneSpec { n_vehicles: 8, ..spec() }, false).unwrap();
    let mut lines = String::new();
    for (k, v) in scene.vehicles.iter().enumerate() {
        let b = [v.bbox.x_min, v.bbox.y_min, v.bbox.x_max, v.bbox.y_max];
        let norm = |p: HomogeneousPoint2| vpcalib::heatmap::bbox_normalize_h(p, &v.bbox);
        let payload = if k == 0 {
            let chans = [v.pair.first, v.pair.second]
                .iter()
                .map(|p| encode_vp_all(norm(*p), &scales, DEFAULT_RESOLUTION, 1.0).unwrap())
                .collect();
            let set = HeatmapSet::new(DEFAULT_RESOLUTION, scales.clone(), chans).unwrap();
            write_heatmap_set(&dir.path().join("first.json"), &set).unwrap();
            DetectionPayload::Heatmaps { heatmaps: "first.json".into() }
        } else {
            let p = |h: HomogeneousPoint2| {
                let q = norm(h).dehomogenize().unwrap();
                VpValue::Cartesian([q.x, q.y])
            };
            DetectionPayload::Points { vp_first: p(v.pair.first), vp_second: p(v.pair.second) }
        };
        lines.push_str(&to_json_line(&record(10 * k as u64, b, payload)));
        lines.push('\n');
    }
    lines.push_str(&to_json_line(&record(
        80,
        [10.0, 10.0, 50.0, 40.0],
        DetectionPayload::Heatmaps { heatmaps: "empty.dvp".into() },
    )));
    lines.push('\n');
    let det = dir.path().join("det.jsonl");
    fs::write(&det, lines).unwrap();

    let cfg = PipelineConfig { image_size: Some([1920.0, 1080.0]), ..PipelineConfig::video() };
    let run = run_calibration(&det, &cfg).unwrap();
    assert_eq!(run.counts.detections, 9);
    assert_eq!(run.counts.kept, 9);
    assert_eq!(run.counts.decode_failed, 1);
    assert_eq!(run.counts.pairs_used, 8);

    // a missing heatmap file is an input error, not a detector miss
    fs::remove_file(dir.path().join("first.json")).unwrap();
    assert_eq!(run_calibration(&det, &cfg).unwrap_err().code(), "IoError");
}

#[test]
fn parked_vehicle_stops_voting_after_three_sightings() {
    let scene = vpcalib::synthetic::generate_scene(&SceneSpec { n_vehicles: 6, ..spec() }, false).unwrap();
    let v = &scene.vehicles[0];
    let b = [v.bbox.x_min, v.bbox.y_min, v.bbox.x_max, v.bbox.y_max];
    let norm = |p: HomogeneousPoint2| {
        let q = vpcalib::heatmap::bbox_normalize_h(p, &v.bbox).dehomogenize().unwrap();
        VpValue::Cartesian([q.x, q.y])
    };
    let payload = DetectionPayload::Points { vp_first: norm(v.pair.first), vp_second: norm(v.pair.second) };
    let records: Vec<DetectionRecord> = (0..8).map(|k| record(10 * k, b, payload.clone())).collect();
    let cfg = PipelineConfig { image_size: Some([1920.0, 1080.0]), min_pairs: 1, ..PipelineConfig::video() };
    let run = calibrate_records(&records, std::path::Path::new("."), &cfg).unwrap();
    assert_eq!(run.counts.kept, 3);
    assert_eq!(run.counts.pairs_used, 3);

    let text: String = records.iter().map(|r| to_json_line(r) + "\n").collect();
    assert_eq!(parse_detections(&text).unwrap(), records);
}
