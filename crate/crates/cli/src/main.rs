//! `primgrasp`: file-driven pipelines for rotated geometric-primitive
//! detection and depth-based grasp synthesis.

mod commands;
mod error;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser)]
#[command(
    name = "primgrasp",
    version,
    about = "Rotated-primitive detection pipeline and grasp synthesis",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled synthetic scenes plus a label manifest.
    Synth(SynthArgs),
    /// Cluster label dimensions and build the rotated anchor file.
    Anchors(AnchorsArgs),
    /// Decode a raw-prediction tensor into detections.
    Decode(DecodeArgs),
    /// Filter detections with rotated non-maximum suppression.
    Nms(NmsArgs),
    /// Evaluate the multi-task loss of a tensor against labels.
    Loss(LossArgs),
    /// Check analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Match detections against ground truth and report precision/recall.
    Eval(EvalArgs),
    /// Turn detections plus depth and calibration into grasp poses.
    Grasp(GraspArgs),
    /// Seeded end-to-end run: synth, oracle tensors, decode, NMS, eval, grasp.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackgroundArg {
    Flat,
    Gradient,
    Noise,
}

impl From<BackgroundArg> for primgrasp::scene::Background {
    fn from(b: BackgroundArg) -> Self {
        match b {
            BackgroundArg::Flat => Self::Flat,
            BackgroundArg::Gradient => Self::Gradient,
            BackgroundArg::Noise => Self::Noise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CategoryArg {
    Circle,
    Ellipse,
    Square,
    Rectangle,
}

impl From<CategoryArg> for primgrasp::Category {
    fn from(c: CategoryArg) -> Self {
        match c {
            CategoryArg::Circle => Self::Circle,
            CategoryArg::Ellipse => Self::Ellipse,
            CategoryArg::Square => Self::Square,
            CategoryArg::Rectangle => Self::Rectangle,
        }
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

/// Scene-generation knobs shared by `synth` and `pipeline`.
#[derive(Args, Clone)]
struct SceneOpts {
    #[arg(long, default_value_t = 416)]
    width: usize,
    #[arg(long, default_value_t = 416)]
    height: usize,
    #[arg(long, default_value_t = 3)]
    min_objects: usize,
    #[arg(long, default_value_t = 7)]
    max_objects: usize,
    /// Minimum object axis length in pixels.
    #[arg(long, default_value_t = 24.0)]
    min_size: f64,
    /// Maximum object axis length in pixels.
    #[arg(long, default_value_t = 96.0)]
    max_size: f64,
    /// Largest allowed rotated IoU between any two placed objects.
    #[arg(long, default_value = "0.3", value_parser = unit_interval)]
    max_pairwise_iou: f64,
    #[arg(long, value_enum, default_value_t = BackgroundArg::Flat)]
    background: BackgroundArg,
    /// Additive gray-noise standard deviation in gray levels.
    #[arg(long, default_value_t = 4.0)]
    noise_sigma: f64,
    /// Allowed categories (comma separated).
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = [CategoryArg::Circle, CategoryArg::Ellipse, CategoryArg::Square, CategoryArg::Rectangle])]
    categories: Vec<CategoryArg>,
}

impl SceneOpts {
    fn to_spec(&self, with_depth: bool) -> primgrasp::scene::SceneSpec {
        primgrasp::scene::SceneSpec {
            width: self.width,
            height: self.height,
            object_count: (self.min_objects, self.max_objects),
            categories: self.categories.iter().map(|&c| c.into()).collect(),
            size_range: (self.min_size, self.max_size),
            max_pairwise_iou: self.max_pairwise_iou,
            background: self.background.into(),
            noise_sigma: self.noise_sigma,
            with_depth,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for scenes and the manifest.
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of scenes to generate.
    #[arg(long)]
    count: usize,
    /// Master seed; scene i uses a stream derived from (seed, i).
    #[arg(long)]
    seed: u64,
    /// Also emit 16-bit depth rasters.
    #[arg(long)]
    depth: bool,
    #[command(flatten)]
    scene: SceneOpts,
}

#[derive(Args)]
struct AnchorsArgs {
    /// Manifest listing label files, one path per line.
    #[arg(long)]
    manifest: PathBuf,
    /// Output anchor file.
    #[arg(long)]
    out: PathBuf,
    /// Dimension cluster count.
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// Orientation priors per dimension cluster.
    #[arg(long, default_value_t = 6)]
    angles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Convergence threshold on centroid movement, pixels.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct DecodeArgs {
    /// Raw-prediction tensor file.
    #[arg(long)]
    tensor: PathBuf,
    /// Anchor file; its anchor count must match the tensor's B.
    #[arg(long)]
    anchors: PathBuf,
    /// Output detections file.
    #[arg(long)]
    out: PathBuf,
    /// Keep detections with combined score at or above this.
    #[arg(long, default_value = "0.25", value_parser = unit_interval)]
    score_threshold: f64,
    /// Write a PPM with the kept detections painted.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Base image for --overlay (defaults to a black canvas).
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Args)]
struct NmsArgs {
    /// Input detections file.
    #[arg(long)]
    dets: PathBuf,
    /// Output detections file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    iou_threshold: f64,
    /// Suppress across categories instead of per category.
    #[arg(long)]
    class_agnostic: bool,
    /// Disable the bounding-box prefilter (same output, slower).
    #[arg(long)]
    no_prefilter: bool,
    /// Write a PPM with the kept detections painted.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Base image for --overlay (defaults to a black canvas).
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct LossWeightOpts {
    #[arg(long, default_value_t = 1.0)]
    lambda_reg: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_angle: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_obj: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda_noobj: f64,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    /// Ground-truth label file.
    #[arg(long)]
    labels: PathBuf,
    /// Output report file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    weights: LossWeightOpts,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Cap on checked parameters; responsible slots are always included.
    #[arg(long, default_value_t = 4000)]
    max_params: usize,
    /// Relative-error bound reported as the verdict.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[command(flatten)]
    weights: LossWeightOpts,
}

#[derive(Args)]
struct EvalArgs {
    /// Detections file (single scene).
    #[arg(long, conflicts_with = "dets_manifest", required_unless_present = "dets_manifest")]
    dets: Option<PathBuf>,
    /// Label file (single scene).
    #[arg(long, conflicts_with = "labels_manifest", required_unless_present = "labels_manifest")]
    labels: Option<PathBuf>,
    /// Manifest of detection files, paired line-by-line with --labels-manifest.
    #[arg(long, requires = "labels_manifest")]
    dets_manifest: Option<PathBuf>,
    /// Manifest of label files.
    #[arg(long, requires = "dets_manifest")]
    labels_manifest: Option<PathBuf>,
    /// Output metrics file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    iou_threshold: f64,
    /// Match detections to ground truth regardless of category.
    #[arg(long)]
    category_agnostic: bool,
}

#[derive(Args)]
struct GraspArgs {
    /// Detection files, one per frame (median-fused when several).
    #[arg(long, required = true, num_args = 1..)]
    dets: Vec<PathBuf>,
    /// Registered 16-bit depth PGM, millimeters, 0 = invalid.
    #[arg(long)]
    depth: PathBuf,
    /// Intrinsics key/value file (fx= fy= cx= cy=).
    #[arg(long)]
    intrinsics: PathBuf,
    /// Extrinsics file: 12 numbers, rows of [R | t].
    #[arg(long)]
    extrinsics: PathBuf,
    /// Output pose file: `x y z yaw aperture reachable_flag` lines.
    #[arg(long)]
    out: PathBuf,
    /// Odd depth-sampling window in pixels.
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Cross-frame association radius in pixels.
    #[arg(long, default_value_t = 20.0)]
    match_radius: f64,
    /// Fraction of frames a track must appear in.
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    min_presence: f64,
    #[arg(long, default_value_t = 0.85)]
    max_reach: f64,
    #[arg(long, default_value_t = 0.01)]
    min_z: f64,
    #[arg(long, default_value_t = 0.80)]
    max_z: f64,
    #[arg(long, default_value_t = 0.15)]
    max_aperture: f64,
}

#[derive(Args)]
struct PipelineArgs {
    /// Output directory (scenes/, tensors/, dets/, dets_nms/, grasps/, ...).
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    count: usize,
    /// Feature-map stride in pixels; width and height must be multiples.
    #[arg(long, default_value_t = 32.0)]
    stride: f64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 6)]
    angles: usize,
    /// Confidence written into oracle tensors at responsible slots.
    #[arg(long, default_value = "0.9", value_parser = unit_interval)]
    oracle_score: f64,
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    score_threshold: f64,
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    iou_threshold: f64,
    #[command(flatten)]
    scene: SceneOpts,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Anchors(args) => commands::anchors::run(args),
        Command::Decode(args) => commands::decode::run(args),
        Command::Nms(args) => commands::nms::run(args),
        Command::Loss(args) => commands::loss::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Grasp(args) => commands::grasp::run(args),
        Command::Pipeline(args) => commands::pipeline::run(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Validation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Internal(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
