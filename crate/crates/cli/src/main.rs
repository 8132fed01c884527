use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lotwatch_core::pipeline::RoiMethod;

mod commands;

#[derive(Parser)]
#[command(name = "lotwatch", version, about = "Camera-based parking occupancy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate an ROI mask; optionally write a preview.
    Mask(MaskArgs),
    /// Count vehicles in the ROI for an image or a directory of images.
    Count(CountArgs),
    /// Score per-image predictions against count labels.
    Eval(EvalArgs),
    /// Measure per-image latency of a backend.
    Bench(BenchArgs),
    /// Tabulate and chart stored benchmark summaries.
    BenchReport(BenchReportArgs),
    /// Run the periodic capture and publish service for one lot.
    Serve(ServeArgs),
    /// Compare camera and per-space sensor deployment costs.
    Cost(CostArgs),
    /// Generate a labelled synthetic parking-lot corpus.
    Scene(SceneArgs),
}

#[derive(Args)]
struct MaskArgs {
    mask: PathBuf,
    #[arg(long, default_value_t = lotwatch_core::roi::DEFAULT_THRESHOLD)]
    threshold: u8,
    /// Gray-fill this image with the mask for the preview instead of
    /// rendering the mask itself.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    preview: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    /// Blob detector for synthetic scenes
    Synthetic,
    /// Precomputed detections from a JSON-lines file
    Fixture,
    /// HTTP inference server
    Remote,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    backend: BackendKind,
    #[arg(long)]
    model_id: Option<String>,
    /// Detections file for the fixture backend.
    #[arg(long, required_if_eq("backend", "fixture"))]
    detections: Option<PathBuf>,
    /// Inference server base URL for the remote backend.
    #[arg(long, env = "LOTWATCH_BACKEND_URL", required_if_eq("backend", "remote"))]
    endpoint: Option<String>,
    #[arg(long, env = "LOTWATCH_BACKEND_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Synthetic backend: probability of missing a vehicle.
    #[arg(long, default_value_t = 0.0)]
    drop_rate: f64,
    /// Synthetic backend: expected spurious boxes per vehicle.
    #[arg(long, default_value_t = 0.0)]
    spurious_rate: f64,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
}

#[derive(Args)]
struct CountArgs {
    /// An image file or a directory of images.
    input: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = lotwatch_core::roi::DEFAULT_THRESHOLD)]
    threshold: u8,
    #[arg(long, default_value_t = RoiMethod::Post)]
    roi_method: RoiMethod,
    /// Comma-separated class labels to count.
    #[arg(long, value_delimiter = ',', default_value = "car,truck")]
    classes: Vec<String>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Print one JSON object per image instead of a table.
    #[arg(long)]
    json: bool,
    /// Write `image_id,vehicle_count` predictions for `eval`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// `image_id,vehicle_count` ground truth.
    #[arg(long)]
    labels: PathBuf,
    /// Prediction CSV, optionally prefixed `model/method=` to name the run.
    /// Repeat to compare runs.
    #[arg(long, required = true)]
    predictions: Vec<String>,
    #[arg(long)]
    capacity: u32,
    /// Drop images whose label has no vehicles before scoring.
    #[arg(long)]
    drop_empty: bool,
    /// Full report (per-image rows included) as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Balanced-accuracy bar chart.
    #[arg(long)]
    chart: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Image files to cycle through.
    #[arg(required = true)]
    images: Vec<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = lotwatch_core::bench::STANDARD_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = lotwatch_core::bench::STANDARD_WARMUP)]
    warmup: usize,
    /// Pick images at random with this seed instead of in order.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    #[arg(long, default_value = "unspecified")]
    hardware_tag: String,
    /// Time masking and counting too; needs --mask.
    #[arg(long, requires = "mask")]
    end_to_end: bool,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = RoiMethod::Post)]
    roi_method: RoiMethod,
    /// Raw per-iteration samples as CSV.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Merge the result into this JSON summary file.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct BenchReportArgs {
    #[arg(long)]
    summary: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Draw reference A100 latencies on the chart.
    #[arg(long)]
    reference: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Lot configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run a single cycle, print the record and exit.
    #[arg(long)]
    once: bool,
}

#[derive(Args)]
struct CostArgs {
    /// Camera system total in USD; defaults to the reference camera BOM.
    #[arg(long, conflicts_with = "camera_bom")]
    camera_usd: Option<f64>,
    /// Per-space sensor cost in USD; defaults to the reference sensor BOM.
    #[arg(long, conflicts_with = "sensor_bom")]
    sensor_usd: Option<f64>,
    /// Bill of materials as TOML (`[[items]]` with name, quantity, unit_cost).
    #[arg(long)]
    camera_bom: Option<PathBuf>,
    #[arg(long)]
    sensor_bom: Option<PathBuf>,
    /// Camera systems needed to cover the lot.
    #[arg(long, default_value_t = 1)]
    cameras: u32,
    #[arg(long, default_value_t = 20)]
    max_spaces: u32,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();

    match Cli::parse().command {
        Command::Mask(a) => commands::mask(a),
        Command::Count(a) => commands::count(a).await,
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a).await,
        Command::BenchReport(a) => commands::bench_report(a),
        Command::Serve(a) => commands::serve(a).await,
        Command::Cost(a) => commands::cost(a),
        Command::Scene(a) => commands::scene(a),
    }
}
