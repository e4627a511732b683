//! Signal preprocessing: band-pass filtering, resampling, optical-density
//! conversion, hemoglobin concentration via the modified Beer-Lambert law,
//! epoching, and standardization.

pub mod bandpass;
pub mod epoching;
pub mod fnirs;
pub mod resample;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bandpass::bandpass_filter;
pub use epoching::{epoch_signal, standardize, Epoch, EpochLabel, LabelInterval};
pub use fnirs::{mbll_to_hbt, to_optical_density, MbllConfig};
pub use resample::resample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Eeg,
    FnirsRaw,
    FnirsOd,
    FnirsHbt,
}

/// Raw or intermediate multichannel time series.
#[derive(Debug, Clone)]
pub struct SignalRecording {
    /// channels x samples, row-major.
    pub data: Vec<f64>,
    pub channels: usize,
    pub samples: usize,
    /// Sampling rate in Hz.
    pub fs: f64,
    pub modality: Modality,
    pub channel_labels: Vec<String>,
    /// Per-channel wavelength in nm; fNIRS only.
    pub wavelengths: Option<Vec<f64>>,
}

impl SignalRecording {
    pub fn new(
        data: Vec<f64>,
        channels: usize,
        fs: f64,
        modality: Modality,
    ) -> Result<SignalRecording, SignalError> {
        if fs <= 0.0 {
            return Err(SignalError::InvalidRate { fs });
        }
        if channels == 0 || data.len() % channels != 0 || data.is_empty() {
            return Err(SignalError::ShapeMismatch {
                channels,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite);
        }
        let samples = data.len() / channels;
        let channel_labels = (0..channels).map(|i| format!("ch{i}")).collect();
        Ok(SignalRecording {
            data,
            channels,
            samples,
            fs,
            modality,
            channel_labels,
            wavelengths: None,
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples as f64 / self.fs
    }
}

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid sampling rate {fs} Hz")]
    InvalidRate { fs: f64 },
    #[error("data length {len} not divisible into {channels} channels")]
    ShapeMismatch { channels: usize, len: usize },
    #[error("signal contains non-finite values")]
    NonFinite,
    #[error("band edges ({lo}, {hi}) violate Nyquist for fs {fs} Hz")]
    Nyquist { lo: f64, hi: f64, fs: f64 },
    #[error("resampling {fs_in} -> {fs_out} Hz would produce an empty signal")]
    EmptyOutput { fs_in: f64, fs_out: f64 },
    #[error("non-positive intensity in channel {channel} at sample {sample}")]
    NonPositiveIntensity { channel: usize, sample: usize },
    #[error("expected modality {expected:?}, got {actual:?}")]
    WrongModality { expected: Modality, actual: Modality },
    #[error("cannot pair {channels} OD channels into two-wavelength sites")]
    UnpairedChannels { channels: usize },
    #[error("extinction matrix is singular or ill-conditioned (condition {condition:.3e})")]
    SingularExtinction { condition: f64 },
    #[error("window of {window} samples exceeds interval of {interval} samples")]
    WindowTooLong { window: usize, interval: usize },
}

pub type SignalResult<T> = Result<T, SignalError>;
