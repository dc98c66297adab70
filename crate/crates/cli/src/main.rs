mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Federated-learning property-leakage lab.
#[derive(Parser, Debug)]
#[command(name = "gradleak", version, about)]
struct Cli {
    /// Master seed; overrides the seed in any config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for outputs that are not given an explicit path.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// JSON config file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset container from a generator config.
    Datagen {
        /// Output file (default: <out-dir>/dataset.fldata).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train under simulated FL and save the snapshot log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Snapshot directory (default: <out-dir>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute one leakage metric per layer.
    Measure {
        #[command(subcommand)]
        metric: Measure,
    },
    /// Run the property-inference attack per layer.
    Attack {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        property: String,
        /// `logistic`, `constant` or `mlp`.
        #[arg(long, default_value = "logistic")]
        family: String,
        /// Output CSV (default: <out-dir>/attack.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlate metric tables with attack tables.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        attack: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        permutations: usize,
        /// Property that ΔR is measured against (default: first in the attack table).
        #[arg(long)]
        baseline: Option<String>,
        /// Output CSV (default: <out-dir>/correlations.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline from an experiment config (or a previous manifest).
    Run,
}

#[derive(Subcommand, Debug)]
enum Measure {
    /// Usable information from layer gradients to a property.
    Vinfo {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        property: String,
        #[arg(long, default_value = "logistic")]
        family: String,
        /// Evaluate on the fitting samples instead of a held-out split.
        #[arg(long)]
        in_sample: bool,
        /// Output CSV (default: <out-dir>/metrics.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalized Jacobian p-norm sensitivity of the final model.
    Sensitivity {
        #[command(flatten)]
        target: Target,
        /// Auxiliary samples to average over.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Comma-separated subset of `F,1,inf`.
        #[arg(long, default_value = "F,1,inf")]
        norms: String,
        /// Differentiate against probabilities instead of logits.
        #[arg(long)]
        probabilities: bool,
        /// Output CSV (default: <out-dir>/metrics.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Target {
    /// Directory written by `train`.
    #[arg(long)]
    snapshots: PathBuf,
    /// Dataset container the snapshots were trained on.
    #[arg(long)]
    data: PathBuf,
    /// `all` or comma-separated parameterized-layer ordinals.
    #[arg(long, default_value = "all")]
    layers: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_config_error() { 2 } else { 3 };
            eprintln!("gradleak: {e}");
            ExitCode::from(code)
        }
    }
}
