//! Windowed epoch extraction and train-statistics standardization.

use serde::{Deserialize, Serialize};

use super::{SignalRecording, SignalResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochLabel {
    Rest,
    Task,
}

/// Labeled time span within a recording, in seconds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LabelInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub label: EpochLabel,
}

/// One training sample: a (1, channels, window) slice of a recording.
#[derive(Debug, Clone)]
pub struct Epoch {
    pub data: Vec<f64>,
    pub channels: usize,
    pub window: usize,
    pub label: EpochLabel,
    pub subject_id: u32,
    pub trial_id: u32,
}

/// Cut windows of `window_s` seconds every `step_s` seconds from each labeled
/// interval. Intervals shorter than the window contribute zero epochs.
pub fn epoch_signal(
    rec: &SignalRecording,
    labels: &[LabelInterval],
    window_s: f64,
    step_s: f64,
    subject_id: u32,
    trial_id: u32,
) -> SignalResult<Vec<Epoch>> {
    let w = (window_s * rec.fs).round() as usize;
    let s = (step_s * rec.fs).round().max(1.0) as usize;
    let mut epochs = Vec::new();
    for interval in labels {
        let start = (interval.start_s * rec.fs).round() as usize;
        let end = ((interval.end_s * rec.fs).round() as usize).min(rec.samples);
        if end < start + w {
            continue; // too short for one window
        }
        let len = end - start;
        let count = (len - w) / s + 1;
        for e in 0..count {
            let off = start + e * s;
            let mut data = Vec::with_capacity(rec.channels * w);
            for c in 0..rec.channels {
                data.extend_from_slice(&rec.channel(c)[off..off + w]);
            }
            epochs.push(Epoch {
                data,
                channels: rec.channels,
                window: w,
                label: interval.label,
                subject_id,
                trial_id,
            });
        }
    }
    Ok(epochs)
}

/// Per-channel mean and standard deviation over a set of epochs.
pub fn channel_stats(epochs: &[&Epoch]) -> (Vec<f64>, Vec<f64>) {
    assert!(!epochs.is_empty());
    let channels = epochs[0].channels;
    let mut mean = vec![0.0; channels];
    let mut count = vec![0usize; channels];
    for e in epochs {
        for c in 0..channels {
            for v in &e.data[c * e.window..(c + 1) * e.window] {
                mean[c] += v;
                count[c] += 1;
            }
        }
    }
    for c in 0..channels {
        mean[c] /= count[c] as f64;
    }
    let mut var = vec![0.0; channels];
    for e in epochs {
        for c in 0..channels {
            for v in &e.data[c * e.window..(c + 1) * e.window] {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
    }
    let std: Vec<f64> = var
        .iter()
        .zip(count.iter())
        .map(|(v, n)| (v / *n as f64).sqrt())
        .collect();
    (mean, std)
}

/// Z-score every epoch per channel using statistics computed from the train
/// split only. Standard deviation is floored at 1e-8.
pub fn standardize(epochs: &mut [Epoch], train_indices: &[usize]) {
    let train: Vec<&Epoch> = train_indices.iter().map(|&i| &epochs[i]).collect();
    let (mean, std) = channel_stats(&train);
    drop(train);
    for e in epochs.iter_mut() {
        let w = e.window;
        for c in 0..e.channels {
            let s = std[c].max(1e-8);
            for v in &mut e.data[c * w..(c + 1) * w] {
                *v = (*v - mean[c]) / s;
            }
        }
    }
}
