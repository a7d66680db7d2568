use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use loopkit::dataset::{
    frame_seed, generate_sequence, lift_rotate_motions, oracle_detector, random_scene, FrameLabels,
    FramePredictions, Manifest, NoiseModel,
};
use loopkit::encoding::{encode_label, AngleQuantizer, LoopCodec, ObjectCatalog};
use loopkit::eval::{evaluate, EvalConfig, EvalFrame};
use loopkit::servo::{simulate, Gains, ServoState, SimulationConfig};
use loopkit::Vec2;

use crate::pipeline::{self, io_error, read_jsonl_file, write_jsonl_file, PipelineError, PropagateSettings};
use crate::store::ProjectStore;

#[derive(Debug, Parser)]
#[command(name = "loopkit", version, about = "Oriented labels for axis-aligned detectors")]
struct Cli {
    /// Report errors on stderr as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn oriented labels into detector-native predictions.
    Encode(EncodeArgs),
    /// Turn detector predictions back into oriented labels.
    Decode(DecodeArgs),
    /// Carry seed labels through an image sequence.
    Propagate(PropagateArgs),
    /// Render a synthetic sequence with ground truth and oracle predictions.
    Synth(SynthArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Simulate the alignment controller.
    Servo(ServoArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Quantization step in degrees.
    #[arg(long, default_value_t = 10.0)]
    theta_hat: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    theta_hat: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PropagateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Labels of the start frame: one labels.jsonl record or a list of labels.
    #[arg(long)]
    seed: PathBuf,
    #[arg(long, default_value_t = 0)]
    from_frame: usize,
    /// Correspondences from an external matcher (JSON Lines).
    #[arg(long)]
    matches: Option<PathBuf>,
    /// JSON file with `ransac` and `matching` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ransac_seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Inlier threshold in pixels.
    #[arg(long)]
    inlier_threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 480)]
    width: u32,
    #[arg(long, default_value_t = 360)]
    height: u32,
    /// Camera rotation per frame, degrees.
    #[arg(long, default_value_t = 0.5)]
    rotation: f64,
    /// Camera scale per frame.
    #[arg(long, default_value_t = 0.999)]
    scale: f64,
    /// Maximum translation jitter per frame and axis, pixels.
    #[arg(long, default_value_t = 1.0)]
    jitter: f64,
    /// Object short side, pixels.
    #[arg(long, default_value_t = 24.0)]
    object_height: f64,
    /// Fraction of the frame used for object placement.
    #[arg(long, default_value_t = 0.6)]
    fill: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = 10.0)]
    theta_hat: f64,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Seed of the oracle detector; defaults to `--seed`.
    #[arg(long)]
    detector_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long, default_value_t = 0.0)]
    center_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    size_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    flip_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    miss_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    clutter_rate: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    theta_hat: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    /// Confidence cut for the precision/recall/IoU columns.
    #[arg(long, default_value_t = 0.5)]
    operating_threshold: f64,
}

#[derive(Debug, Args)]
struct ServoArgs {
    /// Initial relative orientation, degrees.
    #[arg(long, allow_hyphen_values = true)]
    theta0: f64,
    #[arg(long)]
    symmetric: bool,
    /// Translational and rotational gains.
    #[arg(long, default_value = "1.0,1.0", value_parser = parse_pair)]
    gains: (f64, f64),
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    /// Initial object offset from the image center, pixels.
    #[arg(long, default_value = "40,-25", value_parser = parse_pair, allow_hyphen_values = true)]
    offset: (f64, f64),
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Trajectory CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Allowed browser origin; any origin when omitted.
    #[arg(long)]
    cors_origin: Option<String>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated numbers, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Invalid(String),
    #[error("{kind}: {message}")]
    Operation { kind: &'static str, message: String },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Pipeline(e) => e.kind(),
            CliError::Invalid(_) => "invalid",
            CliError::Operation { kind, .. } => kind,
        }
    }
}

fn op<E: std::fmt::Display>(kind: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Operation {
        kind,
        message: e.to_string(),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns 0 on success, 1 when the operation fails and 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json = args.iter().any(|a| a == "--json");
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if json && code != 0 {
                eprintln!("{}", json!({ "error": "usage", "message": e.to_string() }));
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            if cli.json {
                eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            } else {
                eprintln!("error: {e}");
            }
            1
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Propagate(a) => propagate(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Servo(a) => servo(a),
        Command::Serve(a) => serve(a),
    }
}

fn quantizer(theta_hat: f64) -> Result<AngleQuantizer, CliError> {
    AngleQuantizer::from_degrees(theta_hat).map_err(|e| CliError::Invalid(format!("--theta-hat: {e}")))
}

fn load_catalog(path: &Path) -> Result<ObjectCatalog, CliError> {
    ObjectCatalog::load(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn encode(a: EncodeArgs) -> Result<(), CliError> {
    let q = quantizer(a.theta_hat)?;
    let frames: Vec<FrameLabels> = read_jsonl_file(&a.labels)?;
    let out = frames
        .iter()
        .map(|f| {
            let labels = f.to_labels().map_err(op("geometry"))?;
            let preds: Vec<_> = labels.iter().map(|l| encode_label(&q, l)).collect();
            Ok(FramePredictions::new(f.frame, &preds))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_jsonl_file(&a.out, &out)?;
    println!("encoded {} frames into {} classes", out.len(), q.bins());
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<(), CliError> {
    let codec = LoopCodec::new(quantizer(a.theta_hat)?, load_catalog(&a.catalog)?);
    let frames: Vec<FramePredictions> = read_jsonl_file(&a.preds)?;
    let out = frames
        .iter()
        .map(|f| {
            let preds = f.to_predictions().map_err(op("geometry"))?;
            let labels = preds
                .iter()
                .map(|p| codec.decode(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(op("encoding"))?;
            Ok(FrameLabels::new(f.frame, &labels))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_jsonl_file(&a.out, &out)?;
    println!("decoded {} frames", out.len());
    Ok(())
}

fn propagate(a: PropagateArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&a.manifest).map_err(|e| CliError::Invalid(format!("{}: {e}", a.manifest.display())))?;
    let base = a.manifest.parent().unwrap_or(Path::new(".")).to_owned();
    let seed = pipeline::load_seed(&a.seed)?;
    let mut settings: PropagateSettings = match &a.config {
        Some(path) => pipeline::read_json(path)?,
        None => PropagateSettings::default(),
    };
    if let Some(s) = a.ransac_seed {
        settings.ransac.seed = s;
    }
    if let Some(n) = a.iterations {
        settings.ransac.iterations = n;
    }
    if let Some(t) = a.inlier_threshold {
        settings.ransac.inlier_threshold = t;
    }
    match pipeline::propagate_sequence(&manifest, &base, &seed, a.from_frame, a.matches.as_deref(), &settings) {
        Ok(labels) => {
            let records = pipeline::sequence_records(&labels);
            write_jsonl_file(&a.out, &records)?;
            println!("propagated {} labels through {} frames", seed.len(), records.len());
            Ok(())
        }
        Err(PipelineError::Propagation(e)) => {
            if let Some(partial) = e.partial() {
                write_jsonl_file(&a.out, &pipeline::sequence_records(partial))?;
            }
            Err(PipelineError::Propagation(e).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    if a.frames == 0 {
        return Err(CliError::Invalid("--frames must be at least 1".into()));
    }
    let q = quantizer(a.theta_hat)?;
    let catalog = match &a.catalog {
        Some(p) => load_catalog(p)?,
        None => ObjectCatalog::desk_objects(),
    };
    let noise = NoiseModel {
        center_sigma: a.noise.center_sigma,
        size_sigma: a.noise.size_sigma,
        angle_flip_prob: a.noise.flip_prob,
        miss_prob: a.noise.miss_prob,
        clutter_rate: a.noise.clutter_rate,
    };
    noise.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let size = (a.width, a.height);
    let scene = random_scene(&catalog, size, a.object_height, a.fill, a.seed).map_err(op("dataset"))?;
    let center = Vec2::new(0.5 * (f64::from(a.width) - 1.0), 0.5 * (f64::from(a.height) - 1.0));
    let motions = lift_rotate_motions(a.frames - 1, a.rotation.to_radians(), a.scale, center, a.jitter, a.seed.wrapping_add(1));
    let frames = generate_sequence(&scene, &motions, size).map_err(op("dataset"))?;

    let frame_dir = a.out.join("frames");
    std::fs::create_dir_all(&frame_dir).map_err(io_error(&frame_dir))?;
    let mut paths = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let rel = PathBuf::from("frames").join(format!("frame_{i:04}.png"));
        f.image.save(a.out.join(&rel)).map_err(op("io"))?;
        paths.push(rel);
    }
    let manifest = Manifest {
        frames: paths,
        fps: a.fps,
        camera_height_mm: None,
    };
    write_text(&a.out.join("manifest.json"), &serde_json::to_string_pretty(&manifest).expect("serializes"))?;
    write_text(&a.out.join("catalog.json"), &catalog.to_json_pretty())?;

    let gt: Vec<FrameLabels> = frames.iter().enumerate().map(|(i, f)| FrameLabels::new(i, &f.labels)).collect();
    write_jsonl_file(&a.out.join("labels.jsonl"), &gt)?;
    write_text(&a.out.join("seed.json"), &serde_json::to_string_pretty(&gt[0]).expect("serializes"))?;

    let detector_seed = a.detector_seed.unwrap_or(a.seed);
    let preds = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = oracle_detector(&f.labels, size, catalog.len(), &q, &noise, frame_seed(detector_seed, i)).map_err(op("dataset"))?;
            Ok(FramePredictions::new(i, &p))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_jsonl_file(&a.out.join("preds.jsonl"), &preds)?;
    println!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, format!("{text}\n")).map_err(io_error(path))?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let codec = LoopCodec::new(quantizer(a.theta_hat)?, load_catalog(&a.catalog)?);
    let gt: Vec<FrameLabels> = read_jsonl_file(&a.gt)?;
    let preds: Vec<FramePredictions> = read_jsonl_file(&a.pred)?;
    let mut frames: BTreeMap<usize, EvalFrame> = BTreeMap::new();
    for f in &gt {
        frames.entry(f.frame).or_default().gts.extend(f.to_labels().map_err(op("geometry"))?);
    }
    for f in &preds {
        frames.entry(f.frame).or_default().preds.extend(f.to_predictions().map_err(op("geometry"))?);
    }
    let frames: Vec<EvalFrame> = frames.into_values().collect();
    let config = EvalConfig {
        iou_threshold: a.iou_threshold,
        operating_threshold: a.operating_threshold,
    };
    let report = evaluate(&frames, &codec, &config).map_err(op("eval"))?;
    write_text(&a.out, &report.to_json_pretty())?;
    if let Some(path) = &a.csv {
        let file = File::create(path).map_err(io_error(path))?;
        report.write_csv(BufWriter::new(file)).map_err(op("io"))?;
    }
    println!("mAP {:.4} over {} frames", report.map, frames.len());
    Ok(())
}

fn servo(a: ServoArgs) -> Result<(), CliError> {
    let gains = Gains {
        k_t: a.gains.0,
        k_theta: a.gains.1,
        dt: a.dt,
    };
    if !(gains.k_t >= 0.0 && gains.k_theta >= 0.0 && gains.dt > 0.0) {
        return Err(CliError::Invalid("gains must be >= 0 and --dt > 0".into()));
    }
    let start = ServoState::from_image(Vec2::new(a.offset.0, a.offset.1), a.theta0.to_radians(), Vec2::new(320.0, 240.0));
    let config = SimulationConfig {
        max_steps: a.max_steps,
        ..SimulationConfig::default()
    };
    let sim = simulate(&start, &gains, a.symmetric, &config);
    if let Some(path) = &a.out {
        let file = File::create(path).map_err(io_error(path))?;
        sim.write_csv(BufWriter::new(file)).map_err(op("io"))?;
    }
    let last = sim.trajectory.last().expect("trajectory has the start point");
    println!(
        "{}",
        json!({
            "converged": sim.converged,
            "steps": sim.steps(),
            "theta_deg": last.theta.to_degrees(),
            "error": [last.error.x, last.error.y],
        })
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let store = ProjectStore::open(&a.root).map_err(op("io"))?;
    let origin = a
        .cors_origin
        .map(|o| o.parse().map_err(|_| CliError::Invalid(format!("invalid --cors-origin {o:?}"))))
        .transpose()?;
    let runtime = tokio::runtime::Runtime::new().map_err(op("io"))?;
    runtime
        .block_on(crate::service::serve(store, SocketAddr::new(a.host, a.port), origin))
        .map_err(op("io"))
}
