//! Dataset plumbing: on-disk recording format, stratified splits, and a
//! synthetic hybrid EEG+fNIRS generator with closed-form oracle classifiers
//! for desk-scale verification.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{
    Epoch, EpochLabel, LabelInterval, Modality, SignalError, SignalRecording,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error("payload holds {actual} bytes, manifest declares {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("payload contains non-finite values")]
    NonFinite,
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("need at least 10 trials, got {0}")]
    TooFewTrials(usize),
    #[error("split ratios {0:?} do not sum to 1")]
    BadRatios([f64; 3]),
    #[error("class {class:?} has {count} epochs, fewer than {needed} required")]
    ClassTooSmall {
        class: EpochLabel,
        count: usize,
        needed: usize,
    },
    #[error("fold count {0} must be at least 2")]
    BadFoldCount(usize),
}

pub type DataResult<T> = Result<T, DataError>;

/// Sidecar JSON describing one raw payload file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordingManifest {
    pub subject_id: u32,
    pub session_id: u32,
    pub modality: Modality,
    pub fs: f64,
    pub channels: usize,
    pub samples: usize,
    /// Element type of the payload; only "f32" is supported.
    pub dtype: String,
    /// Byte order of the payload; only "little" is supported.
    pub byte_order: String,
    pub labels: Vec<LabelInterval>,
    /// Payload path relative to the manifest's directory.
    pub payload: String,
    pub wavelengths: Option<Vec<f64>>,
}

/// Write `rec` as a little-endian f32 payload plus JSON manifest under
/// `dir/manifests` and `dir/payloads`. Returns the manifest path.
pub fn save_recording(
    dir: &Path,
    stem: &str,
    rec: &SignalRecording,
    subject_id: u32,
    session_id: u32,
    labels: &[LabelInterval],
) -> DataResult<PathBuf> {
    let manifest_dir = dir.join("manifests");
    let payload_dir = dir.join("payloads");
    fs::create_dir_all(&manifest_dir)?;
    fs::create_dir_all(&payload_dir)?;
    let mut bytes = Vec::with_capacity(rec.data.len() * 4);
    for &v in &rec.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let payload_rel = format!("../payloads/{stem}.bin");
    fs::write(payload_dir.join(format!("{stem}.bin")), &bytes)?;
    let manifest = RecordingManifest {
        subject_id,
        session_id,
        modality: rec.modality,
        fs: rec.fs,
        channels: rec.channels,
        samples: rec.samples,
        dtype: "f32".to_string(),
        byte_order: "little".to_string(),
        labels: labels.to_vec(),
        payload: payload_rel,
        wavelengths: rec.wavelengths.clone(),
    };
    let path = manifest_dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

/// Load and strictly validate a recording from its manifest path.
pub fn load_recording(
    manifest_path: &Path,
) -> DataResult<(SignalRecording, RecordingManifest)> {
    let manifest: RecordingManifest =
        serde_json::from_slice(&fs::read(manifest_path)?)?;
    if manifest.dtype != "f32" {
        return Err(DataError::InvalidManifest(format!(
            "unsupported dtype {:?}",
            manifest.dtype
        )));
    }
    if manifest.byte_order != "little" {
        return Err(DataError::InvalidManifest(format!(
            "unsupported byte order {:?}",
            manifest.byte_order
        )));
    }
    if manifest.fs <= 0.0 {
        return Err(DataError::InvalidManifest(format!(
            "sampling rate {} Hz",
            manifest.fs
        )));
    }
    let duration = manifest.samples as f64 / manifest.fs;
    for l in &manifest.labels {
        if l.start_s < 0.0 || l.end_s > duration + 1e-9 || l.start_s >= l.end_s {
            return Err(DataError::InvalidManifest(format!(
                "label interval [{}, {}] outside recording of {duration} s",
                l.start_s, l.end_s
            )));
        }
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(base.join(&manifest.payload))?;
    let expected = manifest.channels * manifest.samples * 4;
    if bytes.len() != expected {
        return Err(DataError::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFinite);
    }
    let mut rec =
        SignalRecording::new(data, manifest.channels, manifest.fs, manifest.modality)?;
    rec.wavelengths = manifest.wavelengths.clone();
    Ok((rec, manifest))
}

/// Train/validation/test index lists over one epoch collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_indices(labels: &[EpochLabel], seed: u64) -> Vec<(EpochLabel, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [EpochLabel::Rest, EpochLabel::Task]
        .into_iter()
        .map(|class| {
            let mut idx: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == class)
                .map(|(i, _)| i)
                .collect();
            // Fisher-Yates with the shared stream keeps the whole split a
            // function of (labels, seed) alone.
            for i in (1..idx.len()).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
            (class, idx)
        })
        .collect()
}

/// Deterministic stratified split by ratio (default 0.70/0.15/0.15).
pub fn stratified_split(
    labels: &[EpochLabel],
    ratios: [f64; 3],
    seed: u64,
) -> DataResult<SplitIndices> {
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(ratios));
    }
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, idx) in class_indices(labels, seed) {
        if idx.is_empty() {
            return Err(DataError::ClassTooSmall {
                class,
                count: 0,
                needed: 1,
            });
        }
        let n = idx.len();
        let n_val = (ratios[1] * n as f64).round() as usize;
        let n_test = (ratios[2] * n as f64).round() as usize;
        let n_train = n - n_val - n_test;
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Deterministic stratified k-fold partition: disjoint folds covering all
/// indices, each class dealt round-robin.
pub fn stratified_kfold(
    labels: &[EpochLabel],
    k: usize,
    seed: u64,
) -> DataResult<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(DataError::BadFoldCount(k));
    }
    let mut folds = vec![Vec::new(); k];
    for (class, idx) in class_indices(labels, seed) {
        if idx.len() < k {
            return Err(DataError::ClassTooSmall {
                class,
                count: idx.len(),
                needed: k,
            });
        }
        for (i, e) in idx.into_iter().enumerate() {
            folds[i % k].push(e);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Fraction of `indices` whose label is Task.
pub fn class_ratio(labels: &[EpochLabel], indices: &[usize]) -> f64 {
    let task = indices
        .iter()
        .filter(|&&i| labels[i] == EpochLabel::Task)
        .count();
    task as f64 / indices.len().max(1) as f64
}

pub const EEG_CHANNELS: usize = 21;
pub const EEG_RAW_FS: f64 = 256.0;
pub const FNIRS_SITES: usize = 34;
pub const FNIRS_CHANNELS: usize = 2 * FNIRS_SITES;
pub const FNIRS_RAW_FS: f64 = 25.0;
pub const TRIAL_SECS: f64 = 12.0;
pub const REST_SECS: f64 = 6.0;

/// Channels carrying the 10 Hz task burst in synthetic EEG.
pub const EEG_BURST_CHANNELS: usize = 8;
/// Peak optical-density excursion of the synthetic hemodynamic response at
/// snr = 1, before per-wavelength scaling.
pub const FNIRS_OD_AMP: f64 = 0.02;
/// Standard deviation of the synthetic optical-density noise.
pub const FNIRS_OD_NOISE: f64 = 0.01;
/// Relative response amplitude at the two wavelengths.
pub const FNIRS_WL_SCALE: [f64; 2] = [1.0, 0.8];

/// One paired synthetic trial: 6 s rest followed by 6 s task.
#[derive(Debug, Clone)]
pub struct SynthTrial {
    pub eeg: SignalRecording,
    pub fnirs: SignalRecording,
    pub labels: Vec<LabelInterval>,
    pub trial_id: u32,
}

fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Kellet's three-pole 1/f approximation over unit white noise.
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = rng.sample(rand::distributions::Standard);
        let w = 2.0 * w - 1.0;
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        x.push(b0 + b1 + b2 + w * 0.1848);
    }
    // Normalize to zero mean and unit variance so burst amplitudes are in
    // exact noise-sigma units.
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-12);
    for v in &mut x {
        *v = (*v - mean) / std;
    }
    x
}

/// Hemodynamic-like response: linear rise over 2 s, then plateau at 1.
fn hemodynamic(u: f64) -> f64 {
    (u / 2.0).clamp(0.0, 1.0)
}

/// Generate `n_trials` paired EEG+fNIRS trials. EEG is unit-variance pink
/// noise with a 10 Hz burst of amplitude `snr` on the first
/// [`EEG_BURST_CHANNELS`] channels during the task half; fNIRS is intensity
/// `10^(-od)` where `od` ramps by `snr * FNIRS_OD_AMP` during the task half
/// plus white noise. `snr = 0` disables both responses.
pub fn synth_hybrid_dataset(
    n_trials: usize,
    seed: u64,
    snr: f64,
) -> DataResult<Vec<SynthTrial>> {
    if n_trials < 10 {
        return Err(DataError::TooFewTrials(n_trials));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eeg_n = (TRIAL_SECS * EEG_RAW_FS) as usize;
    let fnirs_n = (TRIAL_SECS * FNIRS_RAW_FS) as usize;
    let labels = vec![
        LabelInterval {
            start_s: 0.0,
            end_s: REST_SECS,
            label: EpochLabel::Rest,
        },
        LabelInterval {
            start_s: REST_SECS,
            end_s: TRIAL_SECS,
            label: EpochLabel::Task,
        },
    ];
    let mut trials = Vec::with_capacity(n_trials);
    for trial_id in 0..n_trials {
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut eeg_data = Vec::with_capacity(EEG_CHANNELS * eeg_n);
        for c in 0..EEG_CHANNELS {
            let mut x = pink_noise(&mut rng, eeg_n);
            if c < EEG_BURST_CHANNELS {
                for (i, v) in x.iter_mut().enumerate() {
                    let t = i as f64 / EEG_RAW_FS;
                    if t >= REST_SECS {
                        *v += snr
                            * (std::f64::consts::TAU * 10.0 * t + phase).sin();
                    }
                }
            }
            eeg_data.extend(x);
        }
        let eeg =
            SignalRecording::new(eeg_data, EEG_CHANNELS, EEG_RAW_FS, Modality::Eeg)?;

        let mut fnirs_data = Vec::with_capacity(FNIRS_CHANNELS * fnirs_n);
        for ch in 0..FNIRS_CHANNELS {
            let wl = ch / FNIRS_SITES;
            for i in 0..fnirs_n {
                let t = i as f64 / FNIRS_RAW_FS;
                let response = if t >= REST_SECS {
                    snr * FNIRS_OD_AMP * FNIRS_WL_SCALE[wl] * hemodynamic(t - REST_SECS)
                } else {
                    0.0
                };
                let noise: f64 = {
                    // Box-Muller over the shared stream.
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    (-2.0 * u1.ln()).sqrt() * u2.cos()
                };
                let od = response + FNIRS_OD_NOISE * noise;
                fnirs_data.push(10f64.powf(-od));
            }
        }
        let mut fnirs = SignalRecording::new(
            fnirs_data,
            FNIRS_CHANNELS,
            FNIRS_RAW_FS,
            Modality::FnirsRaw,
        )?;
        fnirs.wavelengths = Some(
            std::iter::repeat(760.0)
                .take(FNIRS_SITES)
                .chain(std::iter::repeat(850.0).take(FNIRS_SITES))
                .collect(),
        );
        trials.push(SynthTrial {
            eeg,
            fnirs,
            labels: labels.clone(),
            trial_id: trial_id as u32,
        });
    }
    Ok(trials)
}

/// Closed-form oracle for synthetic EEG epochs at the raw rate: mean 10 Hz
/// amplitude over the burst channels, thresholded at half the injected
/// amplitude.
pub fn eeg_oracle_predict(epoch: &Epoch, fs: f64, snr: f64) -> EpochLabel {
    let mut amp = 0.0;
    for c in 0..EEG_BURST_CHANNELS.min(epoch.channels) {
        let x = &epoch.data[c * epoch.window..(c + 1) * epoch.window];
        amp += crate::signal::bandpass::tone_amplitude(x, fs, 10.0);
    }
    amp /= EEG_BURST_CHANNELS.min(epoch.channels) as f64;
    if amp > snr / 2.0 {
        EpochLabel::Task
    } else {
        EpochLabel::Rest
    }
}

/// Closed-form oracle for synthetic fNIRS epochs on raw intensities: mean
/// optical density against the known unit baseline, thresholded at half the
/// weakest task-epoch response.
pub fn fnirs_oracle_predict(epoch: &Epoch, snr: f64) -> EpochLabel {
    let mut od_sum = 0.0;
    for &v in &epoch.data {
        od_sum += -v.log10();
    }
    let mean_od = od_sum / epoch.data.len() as f64;
    let wl_mean = (FNIRS_WL_SCALE[0] + FNIRS_WL_SCALE[1]) / 2.0;
    // The first task epoch covers the initial quarter of the 2 s rise, so
    // its mean response is amp/4; threshold at half of that.
    let threshold = snr * FNIRS_OD_AMP * wl_mean * 0.125;
    if mean_od > threshold {
        EpochLabel::Task
    } else {
        EpochLabel::Rest
    }
}

/// Epoch all trials of one modality with a 1 s window and 0.5 s step.
pub fn epoch_trials(
    trials: &[SynthTrial],
    modality: Modality,
) -> DataResult<Vec<Epoch>> {
    let mut out = Vec::new();
    for t in trials {
        let rec = match modality {
            Modality::Eeg => &t.eeg,
            _ => &t.fnirs,
        };
        out.extend(crate::signal::epoch_signal(
            rec, &t.labels, 1.0, 0.5, 0, t.trial_id,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced_labels(n: usize) -> Vec<EpochLabel> {
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    EpochLabel::Rest
                } else {
                    EpochLabel::Task
                }
            })
            .collect()
    }

    #[test]
    fn recording_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let trials = synth_hybrid_dataset(10, 7, 1.0).unwrap();
        let labels = trials[0].labels.clone();
        let p =
            save_recording(dir.path(), "t0_eeg", &trials[0].eeg, 1, 1, &labels).unwrap();
        let (rec, manifest) = load_recording(&p).unwrap();
        assert_eq!(rec.channels, EEG_CHANNELS);
        assert_eq!(rec.fs, EEG_RAW_FS);
        assert_eq!(manifest.labels.len(), 2);
        // Saving the loaded copy reproduces the payload byte for byte.
        let p2 = save_recording(dir.path(), "t0_copy", &rec, 1, 1, &labels).unwrap();
        let (rec2, _) = load_recording(&p2).unwrap();
        assert_eq!(rec.data, rec2.data);
        let b1 = std::fs::read(dir.path().join("payloads/t0_eeg.bin")).unwrap();
        let b2 = std::fs::read(dir.path().join("payloads/t0_copy.bin")).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rec = SignalRecording::new(vec![1.0; 64], 2, 10.0, Modality::Eeg).unwrap();
        let p = save_recording(dir.path(), "r", &rec, 0, 0, &[]).unwrap();
        let payload = dir.path().join("payloads/r.bin");
        let bytes = std::fs::read(&payload).unwrap();
        std::fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load_recording(&p),
            Err(DataError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_rate_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rec = SignalRecording::new(vec![1.0; 64], 2, 10.0, Modality::Eeg).unwrap();
        let p = save_recording(dir.path(), "r", &rec, 0, 0, &[]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replace("\"fs\": 10.0", "\"fs\": 0.0")).unwrap();
        assert!(matches!(
            load_recording(&p),
            Err(DataError::InvalidManifest(_))
        ));
    }

    #[test]
    fn ratio_split_1000_balanced() {
        let labels = balanced_labels(1000);
        let s = stratified_split(&labels, [0.70, 0.15, 0.15], 3).unwrap();
        assert_eq!(s.train.len(), 700);
        assert_eq!(s.val.len(), 150);
        assert_eq!(s.test.len(), 150);
        for idx in [&s.train, &s.val, &s.test] {
            let task = idx.iter().filter(|&&i| labels[i] == EpochLabel::Task).count();
            assert_eq!(task * 2, idx.len());
        }
    }

    #[test]
    fn split_disjoint_and_covering() {
        let labels = balanced_labels(101);
        let s = stratified_split(&labels, [0.70, 0.15, 0.15], 9).unwrap();
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .cloned()
            .collect();
        all.sort_unstable();
        let expect: Vec<usize> = (0..101).collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn split_deterministic_same_seed() {
        let labels = balanced_labels(500);
        let a = stratified_split(&labels, [0.70, 0.15, 0.15], 42).unwrap();
        let b = stratified_split(&labels, [0.70, 0.15, 0.15], 42).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        let c = stratified_split(&labels, [0.70, 0.15, 0.15], 43).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn bad_ratios_rejected() {
        let labels = balanced_labels(10);
        assert!(stratified_split(&labels, [0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn kfold_disjoint_covering_even() {
        let labels = balanced_labels(100);
        let folds = stratified_kfold(&labels, 5, 11).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all = Vec::new();
        for f in &folds {
            assert_eq!(f.len(), 20);
            let task = f.iter().filter(|&&i| labels[i] == EpochLabel::Task).count();
            assert_eq!(task, 10);
            all.extend_from_slice(f);
        }
        all.sort_unstable();
        let expect: Vec<usize> = (0..100).collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn kfold_rejects_small_class() {
        let labels = vec![
            EpochLabel::Rest,
            EpochLabel::Rest,
            EpochLabel::Rest,
            EpochLabel::Task,
        ];
        assert!(matches!(
            stratified_kfold(&labels, 5, 0),
            Err(DataError::ClassTooSmall { .. })
        ));
    }

    #[test]
    fn synth_rejects_too_few_trials() {
        assert!(matches!(
            synth_hybrid_dataset(5, 0, 1.0),
            Err(DataError::TooFewTrials(5))
        ));
    }

    #[test]
    fn synth_shapes_and_balance() {
        let trials = synth_hybrid_dataset(10, 1, 2.0).unwrap();
        assert_eq!(trials.len(), 10);
        let t = &trials[0];
        assert_eq!(t.eeg.channels, 21);
        assert_eq!(t.eeg.samples, 3072);
        assert_eq!(t.fnirs.channels, 68);
        assert_eq!(t.fnirs.samples, 300);
        let eeg_epochs = epoch_trials(&trials, Modality::Eeg).unwrap();
        assert_eq!(eeg_epochs.len(), 10 * 22);
        let task = eeg_epochs
            .iter()
            .filter(|e| e.label == EpochLabel::Task)
            .count();
        assert_eq!(task * 2, eeg_epochs.len());
    }

    #[test]
    fn synth_same_seed_identical_bytes() {
        let a = synth_hybrid_dataset(10, 99, 2.0).unwrap();
        let b = synth_hybrid_dataset(10, 99, 2.0).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.eeg.data, y.eeg.data);
            assert_eq!(x.fnirs.data, y.fnirs.data);
        }
        let c = synth_hybrid_dataset(10, 100, 2.0).unwrap();
        assert_ne!(a[0].eeg.data, c[0].eeg.data);
    }

    #[test]
    fn oracle_accuracy_high_at_snr_2() {
        let trials = synth_hybrid_dataset(20, 5, 2.0).unwrap();
        for (modality, predict) in [
            (Modality::Eeg, true),
            (Modality::FnirsRaw, false),
        ] {
            let epochs = epoch_trials(&trials, modality).unwrap();
            let correct = epochs
                .iter()
                .filter(|e| {
                    let pred = if predict {
                        eeg_oracle_predict(e, EEG_RAW_FS, 2.0)
                    } else {
                        fnirs_oracle_predict(e, 2.0)
                    };
                    pred == e.label
                })
                .count();
            let acc = correct as f64 / epochs.len() as f64;
            assert!(acc >= 0.95, "{modality:?} oracle accuracy {acc}");
        }
    }

    #[test]
    fn oracle_chance_at_snr_0() {
        let trials = synth_hybrid_dataset(20, 6, 0.0).unwrap();
        for (modality, is_eeg) in [
            (Modality::Eeg, true),
            (Modality::FnirsRaw, false),
        ] {
            let epochs = epoch_trials(&trials, modality).unwrap();
            let correct = epochs
                .iter()
                .filter(|e| {
                    let pred = if is_eeg {
                        eeg_oracle_predict(e, EEG_RAW_FS, 0.0)
                    } else {
                        fnirs_oracle_predict(e, 0.0)
                    };
                    pred == e.label
                })
                .count();
            let acc = correct as f64 / epochs.len() as f64;
            assert!(
                (acc - 0.5).abs() <= 0.05,
                "{modality:?} chance accuracy {acc}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn stratification_within_two_points(n in 50usize..400, seed in 0u64..50) {
            let labels = balanced_labels(n);
            let s = stratified_split(&labels, [0.70, 0.15, 0.15], seed).unwrap();
            let global = class_ratio(&labels, &(0..n).collect::<Vec<_>>());
            for idx in [&s.train, &s.val, &s.test] {
                let r = class_ratio(&labels, idx);
                prop_assert!((r - global).abs() <= 0.02 + 1.0 / idx.len() as f64);
            }
        }
    }
}
