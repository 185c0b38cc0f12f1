use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vpcalib::evaluation::PairMode;
use vpcalib::pipeline::{
    load_augment_spec, load_scene_spec, report_json, report_table, run_augment, run_calibration, run_evaluation,
    run_synth, to_json_pretty, write_text, PipelineConfig, PipelineError, PrincipalPointMode, SynthOptions,
};
use vpcalib::projective::ImagePoint;

/// Traffic camera calibration from vehicle vanishing points.
#[derive(Parser)]
#[command(name = "vpcalib", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate focal length, horizon and road plane from a detections file.
    Calibrate(CalibrateArgs),
    /// Score a calibration against measured distances.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Sample perspective augmentations of a box.
    Augment(AugmentArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// JSON lines, one detection per line.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pipeline config (JSON). Defaults to the video preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frame size as WIDTHxHEIGHT, overrides the config.
    #[arg(long, value_parser = parse_size)]
    image_size: Option<[f64; 2]>,
    /// Principal point as X,Y, overrides the config.
    #[arg(long, value_parser = parse_point)]
    principal_point: Option<ImagePoint>,
    /// Fix the plane scale from one known distance: X1,Y1,X2,Y2,METERS.
    #[arg(long, value_parser = parse_reference)]
    scale_reference: Option<[f64; 5]>,
    /// Decode on the calling thread only.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// ordered, unordered-min or unordered-first; overrides the config.
    #[arg(long, value_parser = parse_pair_mode)]
    pair_mode: Option<PairMode>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Emit heatmap files instead of inline vanishing points.
    #[arg(long)]
    heatmaps: bool,
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn floats(s: &str, sep: char, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> =
        s.split(sep).map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<_, _>>()?;
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(format!("expected {n} finite numbers separated by '{sep}'"));
    }
    Ok(v)
}

fn parse_size(s: &str) -> Result<[f64; 2], String> {
    let v = floats(s, 'x', 2)?;
    if v[0] <= 0.0 || v[1] <= 0.0 {
        return Err("size must be positive".into());
    }
    Ok([v[0], v[1]])
}

fn parse_point(s: &str) -> Result<ImagePoint, String> {
    let v = floats(s, ',', 2)?;
    Ok(ImagePoint::new(v[0], v[1]))
}

fn parse_reference(s: &str) -> Result<[f64; 5], String> {
    let v = floats(s, ',', 5)?;
    Ok([v[0], v[1], v[2], v[3], v[4]])
}

fn parse_pair_mode(s: &str) -> Result<PairMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig, PipelineError> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::video()),
    }
}

fn calibrate(args: CalibrateArgs) -> Result<(), PipelineError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(size) = args.image_size {
        cfg.image_size = Some(size);
    }
    if let Some(p) = args.principal_point {
        cfg.principal_point_mode = PrincipalPointMode::Fixed { x: p.x, y: p.y };
    }
    cfg.parallel &= !args.serial;
    let mut run = run_calibration(&args.detections, &cfg)?;
    if let Some([x1, y1, x2, y2, meters]) = args.scale_reference {
        run.calibration =
            run.calibration.with_reference_distance(ImagePoint::new(x1, y1), ImagePoint::new(x2, y2), meters)?;
    }
    write_text(&args.out, &run.to_json())
}

fn evaluate(args: EvaluateArgs) -> Result<(), PipelineError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(mode) = args.pair_mode {
        cfg.pair_mode = mode;
    }
    let report = run_evaluation(&args.calibration, &args.measurements, &cfg)?;
    write_text(&args.out, &report_json(&report))?;
    print!("{}", report_table(&report));
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), PipelineError> {
    let spec = load_scene_spec(&args.spec)?;
    let written = run_synth(&spec, &args.out_dir, SynthOptions { heatmaps: args.heatmaps, parallel: !args.serial })?;
    println!("wrote {} files to {}", written.len(), args.out_dir.display());
    Ok(())
}

fn augment(args: AugmentArgs) -> Result<(), PipelineError> {
    let spec = load_augment_spec(&args.spec)?;
    let samples = run_augment(&spec)?;
    write_text(&args.out, &to_json_pretty(&samples))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Augment(a) => augment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
