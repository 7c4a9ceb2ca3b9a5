//! Command-line interface for estimating model weights, blending
//! predictive draws, and comparing candidates by elpd.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use blendkit::io::commands::{cmd_blend, cmd_compare, cmd_loo, cmd_weights};
use blendkit::io::manifest::Method;

#[derive(Parser)]
#[command(
    name = "blendkit",
    version,
    about = "Model averaging over posterior draws: PSIS-LOO, stacking weights, blended predictions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate leave-one-out elpd for every model in a manifest.
    Loo {
        /// Path to the JSON manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the JSON report (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate model-averaging weights and write a fit file.
    Weights {
        /// Path to the JSON manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the fit JSON (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Weighting method, overriding the manifest's choice.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Sample a blended predictive distribution from a saved fit.
    Blend {
        /// Path to a fit JSON produced by `weights`.
        #[arg(long)]
        fit: PathBuf,
        /// Path to the JSON manifest naming the models to blend.
        #[arg(long)]
        manifest: PathBuf,
        /// Seed for the blending draws, overriding the manifest's.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the blended CSVs and summary (created if needed).
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Rank log likelihood CSVs by total elpd.
    Compare {
        /// Log likelihood CSVs, one per model or blend; named by file stem.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Where to write the comparison rows as JSON (table always prints).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Cap worker threads at $BLENDKIT_THREADS when set; sampling and
/// blending results do not depend on the thread count either way.
fn configure_threads() {
    if let Ok(v) = std::env::var("BLENDKIT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() {
    configure_threads();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Loo { manifest, out } => cmd_loo(manifest, out.as_deref()),
        Command::Weights {
            manifest,
            out,
            method,
        } => cmd_weights(manifest, out.as_deref(), *method),
        Command::Blend {
            fit,
            manifest,
            seed,
            out,
        } => cmd_blend(fit, manifest, *seed, out),
        Command::Compare { inputs, out } => cmd_compare(inputs, out.as_deref()),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
