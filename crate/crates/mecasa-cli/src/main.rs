//! `mecasa` — preprocessing, training, fusion, ablations, and the attention
//! benchmark for the hybrid EEG+fNIRS classifier.

mod config;
mod ops;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{CommonArgs, RunConfig};
use ops::AblationGrid;

#[derive(Parser)]
#[command(name = "mecasa", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic paired EEG+fNIRS dataset.
    Synth,
    /// Turn raw recordings into standardized model-ready epochs.
    Preprocess,
    /// Train and cross-validate a single-modality classifier.
    Train,
    /// Train both backbones plus the fusion head and compare accuracies.
    Fuse,
    /// Sweep embedding dims or fNIRS representations.
    Ablate {
        /// Which axis to sweep.
        #[arg(long, value_enum, default_value = "dims")]
        grid: AblationGrid,
    },
    /// Compare additive and softmax attention cost over sequence length.
    Bench {
        /// Comma-separated sequence lengths.
        #[arg(long, default_value = "256,512,1024,2048,4096,8192")]
        n_list: String,
        /// Embedding dimension.
        #[arg(long, default_value_t = 64)]
        d: usize,
        /// Timing repetitions per point (median reported).
        #[arg(long, default_value_t = 20)]
        reps: usize,
    },
    /// Check every manifest and payload in a dataset root.
    Validate,
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = RunConfig::resolve(&cli.common)?;
    match &cli.cmd {
        Cmd::Synth => ops::cmd_synth(&cfg).map(|_| true),
        Cmd::Preprocess => ops::cmd_preprocess(&cfg).map(|_| true),
        Cmd::Train => ops::cmd_train(&cfg).map(|_| true),
        Cmd::Fuse => ops::cmd_fuse(&cfg).map(|_| true),
        Cmd::Ablate { grid } => ops::cmd_ablate(&cfg, *grid),
        Cmd::Bench { n_list, d, reps } => {
            ops::cmd_bench(&cfg, n_list, *d, *reps).map(|_| true)
        }
        Cmd::Validate => ops::cmd_validate(&cfg),
    }
}
