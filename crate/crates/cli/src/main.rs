mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netsight_core::ErrorKind;

#[derive(Parser, Debug)]
#[command(name = "netsight", version, about = "Spatio-temporal traffic forecasting")]
struct Cli {
    /// Single-threaded execution for bitwise-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Upper bound on worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the fused spatio-temporal adjacency from the training split.
    BuildGraph(RunArgs),
    /// Train a model and write a checkpoint with its loss history.
    Train(RunArgs),
    /// Forecast from a checkpoint to CSV.
    Predict(PredictArgs),
    /// Score a checkpoint on one split.
    Evaluate(CheckpointArgs),
    /// Train and score each ablation variant.
    Ablate(AblateArgs),
    /// Retrain across top-p filter values.
    SweepP(SweepArgs),
    /// Congestion detection accuracy over the congestion-factor grid.
    Congestion(CheckpointArgs),
    /// SMAPE on successive future blocks.
    Accumulate(AccumulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Run configuration, JSON or key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Dataset path, overriding the config.
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Topology edge list, overriding the config.
    #[arg(long)]
    topology: Option<PathBuf>,

    /// Extra `key=value` config overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct CheckpointArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// Dataset path; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Split whose windows are scored.
    #[arg(long, default_value = "test")]
    split: commands::Split,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,

    /// Forecast CSV to write.
    #[arg(long)]
    out: PathBuf,

    /// Steps to forecast; defaults to the trained horizon.
    #[arg(long)]
    horizon: Option<usize>,

    /// Dataset path; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Split whose windows are forecast.
    #[arg(long, default_value = "test")]
    split: commands::Split,

    /// Distance between consecutive forecast windows.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,

    /// Comma-separated variants; all of them by default.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<netsight_core::model::Variant>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,

    /// Comma-separated p values.
    #[arg(long, value_delimiter = ',', default_values_t = [20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0])]
    p: Vec<f64>,

    /// Also search p by bisection on validation loss.
    #[arg(long)]
    select: bool,
}

#[derive(Args, Debug, Clone)]
pub struct AccumulateArgs {
    #[command(flatten)]
    ck: CheckpointArgs,

    /// Block length T in intervals; defaults to a tenth of the test split.
    #[arg(long)]
    block: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::BuildGraph(a) => commands::build_graph(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::SweepP(a) => commands::sweep(&a),
        Command::Congestion(a) => commands::congestion(&a),
        Command::Accumulate(a) => commands::accumulate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
