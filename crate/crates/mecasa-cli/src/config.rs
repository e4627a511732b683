//! Run configuration: built-in defaults, optional TOML file, flag overrides.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CliModality {
    Eeg,
    Fnirs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Repr {
    Od10,
    Hbt,
    Od128,
}

impl Repr {
    pub fn tag(self) -> &'static str {
        match self {
            Repr::Od10 => "od10",
            Repr::Hbt => "hbt",
            Repr::Od128 => "od128",
        }
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// TOML config file supplying defaults for any unset flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset or preprocessed-epochs directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub modality: Option<CliModality>,
    /// fNIRS representation; only valid with --modality fnirs.
    #[arg(long, global = true, value_enum)]
    pub repr: Option<Repr>,
    /// Stage embedding dims, e.g. "64-128".
    #[arg(long, global = true)]
    pub dims: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for reports and artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Trials to generate (synth) or expect (preprocess).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Synthetic task signal-to-noise ratio.
    #[arg(long, global = true)]
    pub snr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Cross-validation folds; below 2 trains a single split.
    #[arg(long, global = true)]
    pub folds: Option<usize>,
}

/// Optional file-level mirror of [`CommonArgs`].
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub modality: Option<CliModality>,
    pub repr: Option<Repr>,
    pub dims: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub snr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub folds: Option<usize>,
}

/// Fully resolved configuration, echoed into every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub modality: CliModality,
    pub repr: Option<Repr>,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub trials: usize,
    pub snr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub folds: usize,
}

pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = s
        .split('-')
        .map(|p| p.trim().parse::<usize>().context("bad dims component"))
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        bail!("dims {s:?} must list at least one positive integer");
    }
    Ok(dims)
}

impl RunConfig {
    /// Merge flags over the optional config file over defaults.
    pub fn resolve(args: &CommonArgs) -> Result<RunConfig> {
        let file: FileConfig = match &args.config {
            Some(path) => toml::from_str(
                &std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?,
            )
            .with_context(|| format!("parsing config {}", path.display()))?,
            None => FileConfig::default(),
        };
        let modality = args
            .modality
            .or(file.modality)
            .unwrap_or(CliModality::Eeg);
        let repr = args.repr.or(file.repr);
        if repr.is_some() && modality == CliModality::Eeg {
            bail!("--repr is only valid with --modality fnirs");
        }
        let dims_str = args
            .dims
            .clone()
            .or(file.dims)
            .unwrap_or_else(|| "16-32".to_string());
        Ok(RunConfig {
            data: args
                .data
                .clone()
                .or(file.data)
                .unwrap_or_else(|| PathBuf::from("data")),
            modality,
            repr,
            dims: parse_dims(&dims_str)?,
            seed: args.seed.or(file.seed).unwrap_or(0),
            out: args
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("out")),
            trials: args.trials.or(file.trials).unwrap_or(20),
            snr: args.snr.or(file.snr).unwrap_or(2.0),
            epochs: args.epochs.or(file.epochs).unwrap_or(100),
            batch_size: args.batch_size.or(file.batch_size).unwrap_or(16),
            lr: args.lr.or(file.lr).unwrap_or(1e-4),
            folds: args.folds.or(file.folds).unwrap_or(5),
        })
    }

    /// The fNIRS representation, defaulting to OD resampled to 128 Hz.
    pub fn repr_or_default(&self) -> Repr {
        self.repr.unwrap_or(Repr::Od128)
    }

    /// File tag of the epochs produced for the active modality.
    pub fn epochs_tag(&self) -> String {
        match self.modality {
            CliModality::Eeg => "eeg".to_string(),
            CliModality::Fnirs => self.repr_or_default().tag().to_string(),
        }
    }
}
