//! Command-line surface, file formats and experiment harnesses.

pub mod ablate;
pub mod checkpoint;
mod commands;
pub mod cubefile;
pub mod manifest;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_ablate, cmd_dehaze, cmd_eval, cmd_sensitivity, cmd_synth, cmd_train, dehaze_cube,
    held_out_report, parse_rgb, run_variant, sensitivity_csv, sensitivity_trials, AblationRow,
    ExperimentData, RunConfig, SensitivityRow, ABLATION_HEADER,
};

#[derive(Debug, Parser)]
#[command(name = "hsi-dehaze", version, about = "Hyperspectral dehazing toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize hazy/clean pairs and a manifest.
    Synth(SynthArgs),
    /// Train a network on a manifest.
    Train(TrainArgs),
    /// Run a checkpoint on one hazy cube.
    Dehaze(DehazeArgs),
    /// Compare an estimate against a reference cube.
    Eval(EvalArgs),
    /// Train and score a grid of ablation variants.
    Ablate(AblateArgs),
    /// Score a checkpoint under randomly drawn haze levels.
    Sensitivity(SensitivityArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of clean `.hsif` cubes.
    #[arg(long)]
    pub clean: PathBuf,
    /// Directory of single-band `.hsif` cirrus patterns with values in [0, 1].
    #[arg(long)]
    pub cirrus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,1")]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 3.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip rotations and flips.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with optional `[network]` and `[training]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `training.max_epochs`.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// History CSV path; defaults to the checkpoint path with `.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DehazeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Writes a PNG false-color composite.
    #[arg(long)]
    pub composite: Option<PathBuf>,
    /// 1-based red,green,blue band numbers for the composite.
    #[arg(long, default_value = "19,9,2")]
    pub rgb: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long = "est")]
    pub estimate: PathBuf,
    #[arg(long)]
    pub uiqi_window: Option<usize>,
    #[arg(long)]
    pub ssim_window: Option<usize>,
    /// Appends a CSV row (header written when the file is new).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated variant names, or `all`.
    #[arg(long, default_value = "full,abs+sr,sr+sse,abs+sr+spe,abs+sr+spa")]
    pub variants: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub gamma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one parsed command, writing its report lines to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> crate::Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Dehaze(a) => cmd_dehaze(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Sensitivity(a) => cmd_sensitivity(a, out),
    }
}
