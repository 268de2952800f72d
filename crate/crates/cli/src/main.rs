mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ModelPreset, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "gridmix",
    version,
    about = "Grid-latent Gaussian mixture prediction of vehicle positions"
)]
struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its manifest.
    Datagen(DatagenArgs),
    /// Train a model and write the checkpoint and loss curve.
    Train(TrainArgs),
    /// Score a checkpoint on the test split.
    Eval(EvalArgs),
    /// Mixture heatmap and predictions for one step of one track.
    Heatmap(HeatmapArgs),
    /// Estimate the measurement noise of raw tracks.
    Noise(NoiseArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[arg(long)]
    pub n_tracks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<ModelPreset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Focal exponent.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Use only the first N training tracks.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Predictions considered by minADE.
    #[arg(long)]
    pub k: Option<usize>,
    /// Known measurement noise; adds noise-corrected metrics.
    #[arg(long, conflicts_with = "estimate_noise")]
    pub sigma_v: Option<f64>,
    /// Estimate the measurement noise from the raw test tracks.
    #[arg(long)]
    pub estimate_noise: bool,
    /// Use only the first N test tracks.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Track CSV; the track is resampled to 100 ms first.
    #[arg(long)]
    pub tracks: PathBuf,
    /// Track to use; defaults to the first one in the file.
    #[arg(long)]
    pub track_id: Option<u64>,
    /// Scenario geometry JSON; without it the map is empty.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Step of the resampled track.
    #[arg(long)]
    pub t: usize,
    /// Pixel size in meters.
    #[arg(long)]
    pub resolution: Option<f64>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Track CSV, dataset directory or manifest.
    #[arg(long)]
    pub tracks: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let run = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    let out = cli
        .out
        .clone()
        .or_else(|| run.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::Datagen(a) => commands::datagen(&run, &out, &a),
        Command::Train(a) => commands::train(&run, &out, &a),
        Command::Eval(a) => commands::eval(&run, &out, &a),
        Command::Heatmap(a) => commands::heatmap(&run, &out, &a),
        Command::Noise(a) => commands::noise(&run, &out, &a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
