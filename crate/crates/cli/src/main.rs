//! `penh`: generate synthetic data, train the quality predictor and the
//! enhancer, score, enhance and evaluate.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 I/O error or
//! missing input, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

use manifest::exit_code;

#[derive(Parser)]
#[command(name = "penh", version, about = "Image enhancement with a learned quality penalty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic rated and paired datasets.
    GenData(GenDataArgs),
    /// Train the quality predictor on the rated training split.
    TrainNima(TrainNimaArgs),
    /// Train the enhancer on the paired training split.
    TrainCan(TrainCanArgs),
    /// Write predicted rating distributions and scores as CSV.
    Score(ScoreArgs),
    /// Apply a trained enhancer to images.
    Enhance(EnhanceArgs),
    /// Compare input, reference and two enhancers on the test split.
    Eval(EvalArgs),
}

/// `HxW`, e.g. `48x64`.
fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height `{h}`"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width `{w}`"))?;
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of rated images and of enhancement pairs.
    #[arg(long, default_value_t = 400)]
    count: usize,
    #[arg(long, default_value = "48x64", value_parser = parse_size)]
    size: (usize, usize),
    /// Reference operator of the pairs: tone, haze or mixed.
    #[arg(long, default_value = "tone")]
    operator: String,
    /// Depth of the enhancer the data is meant for; sets the minimum size.
    #[arg(long, default_value_t = 7)]
    can_depth: usize,
    /// Output directory [default: $PENH_OUT_DIR or ./penh-out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainNimaArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Flat key=value file with training and `nima.` model keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Checkpoint storage type: f32 or f64.
    #[arg(long, default_value = "f32")]
    dtype: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainCanArgs {
    #[arg(long)]
    data: PathBuf,
    /// Frozen quality-predictor checkpoint.
    #[arg(long)]
    nima: PathBuf,
    /// Weight of the quality penalty; 0 gives the pure fidelity baseline
    /// [default: 1e-4].
    #[arg(long)]
    gamma: Option<f64>,
    /// Flat key=value file with training and `can.` model keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    dtype: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    nima: PathBuf,
    /// PPM files or directories of PPM files.
    #[arg(long, num_args = 1.., required = true)]
    images: Vec<PathBuf>,
    /// CSV path [default: scores.csv under $PENH_OUT_DIR or ./penh-out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    can: PathBuf,
    /// PPM files or directories of PPM files.
    #[arg(long, num_args = 1.., required = true)]
    images: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    nima: PathBuf,
    /// Enhancer trained with the quality penalty.
    #[arg(long)]
    can: PathBuf,
    /// Enhancer trained on fidelity alone.
    #[arg(long)]
    can_baseline: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainNima(a) => commands::train_nima(a),
        Command::TrainCan(a) => commands::train_can(a),
        Command::Score(a) => commands::score(a),
        Command::Enhance(a) => commands::enhance(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
