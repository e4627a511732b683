//! Adam optimization, training loops, cross-validation, and accuracy
//! reporting with 95% confidence intervals.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{backbone_forward, BackboneConfig, BackboneParams};
use crate::data::{DataError, SplitIndices};
use crate::fusion::{fuse_logits, FusionConfig, FusionParams};
use crate::signal::{Epoch, EpochLabel};
use crate::tensor::Tensor;
use crate::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGrad { name: String },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("confidence interval needs at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type TrainResult<T> = Result<T, TrainError>;

/// Adam with bias correction; β1=0.9, β2=0.999, eps=1e-8.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    moments: HashMap<usize, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: HashMap::new(),
        }
    }

    /// Consume accumulated gradients: update every parameter that received
    /// one, then reset all gradients for the next backward pass.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> TrainResult<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params {
            let Some(grad) = p.grad() else { continue };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGrad { name: name.clone() });
            }
            let (m, v) = self
                .moments
                .entry(p.id())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
            p.apply_update(|i, w| {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            });
            p.reset_grad();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            lr: 1e-4,
            seed: 0,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

pub type TrainHistory = Vec<EpochRecord>;

/// Per-fold accuracies with mean, 95% CI half-width, and pooled confusion
/// matrix (rows: true class, columns: predicted). Runtime is tracked for
/// logging but excluded from serialization so reports are a pure function
/// of the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub ci_half_width: f64,
    pub confusion: [[usize; 2]; 2],
    #[serde(skip)]
    pub runtime_secs: f64,
}

pub fn label_index(l: EpochLabel) -> usize {
    match l {
        EpochLabel::Rest => 0,
        EpochLabel::Task => 1,
    }
}

/// Stack epochs `idx` into an input tensor (B, 1, channels, window) plus
/// class indices.
pub fn batch_tensor(
    epochs: &[Epoch],
    idx: &[usize],
) -> TrainResult<(Tensor, Vec<usize>)> {
    if idx.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (c, w) = (epochs[idx[0]].channels, epochs[idx[0]].window);
    let mut data = Vec::with_capacity(idx.len() * c * w);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(&epochs[i].data);
        labels.push(label_index(epochs[i].label));
    }
    let x = Tensor::new(vec![idx.len(), 1, c, w], data)?;
    Ok((x, labels))
}

fn shuffled(indices: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx = indices.to_vec();
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

fn snapshot(params: &[(String, Tensor)]) -> Vec<Vec<f64>> {
    params.iter().map(|(_, t)| t.to_vec()).collect()
}

fn restore(params: &[(String, Tensor)], snap: &[Vec<f64>]) {
    for ((_, t), s) in params.iter().zip(snap) {
        t.set_data(s);
    }
}

/// Accuracy of argmax predictions over the indexed epochs, evaluated in
/// batches; also accumulates into `confusion` when provided.
pub fn evaluate_backbone(
    params: &BackboneParams,
    epochs: &[Epoch],
    idx: &[usize],
    mut confusion: Option<&mut [[usize; 2]; 2]>,
) -> TrainResult<f64> {
    let mut correct = 0;
    for chunk in idx.chunks(32) {
        let (x, labels) = batch_tensor(epochs, chunk)?;
        let (_, logits) = backbone_forward(&x, params)?;
        correct += count_correct(&logits, &labels, confusion.as_deref_mut());
    }
    Ok(correct as f64 / idx.len() as f64)
}

fn count_correct(
    logits: &Tensor,
    labels: &[usize],
    mut confusion: Option<&mut [[usize; 2]; 2]>,
) -> usize {
    let classes = logits.shape()[1];
    let data = logits.to_vec();
    let mut correct = 0;
    for (b, &truth) in labels.iter().enumerate() {
        let row = &data[b * classes..(b + 1) * classes];
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if pred == truth {
            correct += 1;
        }
        if let Some(cm) = confusion.as_deref_mut() {
            cm[truth.min(1)][pred.min(1)] += 1;
        }
    }
    correct
}

/// Train a backbone classifier on the train split, tracking validation
/// accuracy per epoch and restoring the best-validation parameters at the
/// end. Deterministic given the seed.
pub fn train_backbone(
    config: &BackboneConfig,
    epochs: &[Epoch],
    split: &SplitIndices,
    tc: &TrainConfig,
) -> TrainResult<(BackboneParams, TrainHistory)> {
    if split.train.is_empty() || split.val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let model = BackboneParams::init(config, &mut rng)?;
    let params = model.params();
    let mut adam = AdamState::new(tc.lr);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best = (f64::MIN, snapshot(&params));
    for epoch in 0..tc.epochs {
        let order = if tc.shuffle {
            shuffled(&split.train, &mut rng)
        } else {
            split.train.clone()
        };
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(tc.batch_size) {
            let (x, labels) = batch_tensor(epochs, chunk)?;
            let (_, logits) = backbone_forward(&x, &model)?;
            let loss = logits.cross_entropy(&labels)?;
            let l = loss.item();
            if !l.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            loss_sum += l;
            batches += 1;
            loss.backward()?;
            adam.step(&params)?;
        }
        let val_accuracy = evaluate_backbone(&model, epochs, &split.val, None)?;
        if val_accuracy > best.0 {
            best = (val_accuracy, snapshot(&params));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_accuracy,
        });
    }
    restore(&params, &best.1);
    Ok((model, history))
}

/// Pooled-feature vectors (one row per indexed epoch) from a trained
/// backbone.
pub fn extract_features(
    params: &BackboneParams,
    epochs: &[Epoch],
    idx: &[usize],
) -> TrainResult<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(32) {
        let (x, _) = batch_tensor(epochs, chunk)?;
        let (features, _) = backbone_forward(&x, params)?;
        let d = features.shape()[1];
        let data = features.to_vec();
        for b in 0..chunk.len() {
            out.push(data[b * d..(b + 1) * d].to_vec());
        }
    }
    Ok(out)
}

fn feature_batch(features: &[Vec<f64>], idx: &[usize]) -> TrainResult<Tensor> {
    if idx.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let d = features[idx[0]].len();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&features[i]);
    }
    Ok(Tensor::new(vec![idx.len(), d], data)?)
}

/// Train the fusion head on frozen per-modality feature vectors (indexed in
/// parallel: `feats_eeg[i]` and `feats_fnirs[i]` describe the same epoch).
pub fn train_fusion(
    config: &FusionConfig,
    feats_eeg: &[Vec<f64>],
    feats_fnirs: &[Vec<f64>],
    labels: &[usize],
    split: &SplitIndices,
    tc: &TrainConfig,
) -> TrainResult<(FusionParams, TrainHistory)> {
    if split.train.is_empty() || split.val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let model = FusionParams::init(config, &mut rng);
    let params = model.params();
    let mut adam = AdamState::new(tc.lr);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best = (f64::MIN, snapshot(&params));
    for epoch in 0..tc.epochs {
        let order = if tc.shuffle {
            shuffled(&split.train, &mut rng)
        } else {
            split.train.clone()
        };
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(tc.batch_size) {
            let xe = feature_batch(feats_eeg, chunk)?;
            let xf = feature_batch(feats_fnirs, chunk)?;
            let logits = fuse_logits(&xe, &xf, &model)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = logits.cross_entropy(&batch_labels)?;
            let l = loss.item();
            if !l.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            loss_sum += l;
            batches += 1;
            loss.backward()?;
            adam.step(&params)?;
        }
        let val_accuracy = evaluate_fusion(&model, feats_eeg, feats_fnirs, labels, &split.val, None)?;
        if val_accuracy > best.0 {
            best = (val_accuracy, snapshot(&params));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_accuracy,
        });
    }
    restore(&params, &best.1);
    Ok((model, history))
}

pub fn evaluate_fusion(
    params: &FusionParams,
    feats_eeg: &[Vec<f64>],
    feats_fnirs: &[Vec<f64>],
    labels: &[usize],
    idx: &[usize],
    mut confusion: Option<&mut [[usize; 2]; 2]>,
) -> TrainResult<f64> {
    let mut correct = 0;
    for chunk in idx.chunks(64) {
        let xe = feature_batch(feats_eeg, chunk)?;
        let xf = feature_batch(feats_fnirs, chunk)?;
        let logits = fuse_logits(&xe, &xf, params)?;
        let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        correct += count_correct(&logits, &batch_labels, confusion.as_deref_mut());
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Mean and 95% half-width (1.96 · sample std / sqrt(k)).
pub fn confidence_interval(accs: &[f64]) -> TrainResult<(f64, f64)> {
    if accs.len() < 2 {
        return Err(TrainError::TooFewValues(accs.len()));
    }
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Stratified k-fold cross-validation over a per-fold runner. The runner
/// receives (fold index, train indices, test indices) and returns the fold
/// accuracy plus its confusion contribution.
pub fn cross_validate<F>(
    labels: &[EpochLabel],
    k: usize,
    seed: u64,
    mut run_fold: F,
) -> TrainResult<MetricsReport>
where
    F: FnMut(usize, &[usize], &[usize]) -> TrainResult<(f64, [[usize; 2]; 2])>,
{
    let start = std::time::Instant::now();
    let folds = crate::data::stratified_kfold(labels, k, seed)?;
    let mut fold_accuracies = Vec::with_capacity(k);
    let mut confusion = [[0usize; 2]; 2];
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        let (acc, cm) = run_fold(f, &train, test)?;
        fold_accuracies.push(acc);
        for r in 0..2 {
            for c in 0..2 {
                confusion[r][c] += cm[r][c];
            }
        }
    }
    let (mean_accuracy, ci_half_width) = confidence_interval(&fold_accuracies)?;
    Ok(MetricsReport {
        fold_accuracies,
        mean_accuracy,
        ci_half_width,
        confusion,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Cross-validate the backbone classifier: each fold re-initializes the
/// model, carves a validation subset out of the fold's training indices for
/// best-model selection, and scores the held-out fold.
pub fn cross_validate_backbone(
    config: &BackboneConfig,
    epochs: &[Epoch],
    k: usize,
    tc: &TrainConfig,
) -> TrainResult<MetricsReport> {
    let labels: Vec<EpochLabel> = epochs.iter().map(|e| e.label).collect();
    cross_validate(&labels, k, tc.seed, |f, train, test| {
        let train_labels: Vec<EpochLabel> =
            train.iter().map(|&i| labels[i]).collect();
        let inner = crate::data::stratified_split(
            &train_labels,
            [0.85, 0.15, 0.0],
            tc.seed ^ f as u64,
        )?;
        let split = SplitIndices {
            train: inner.train.iter().map(|&i| train[i]).collect(),
            val: inner.val.iter().map(|&i| train[i]).collect(),
            test: test.to_vec(),
        };
        let fold_tc = TrainConfig {
            seed: tc.seed.wrapping_add(f as u64),
            ..tc.clone()
        };
        let (model, _) = train_backbone(config, epochs, &split, &fold_tc)?;
        let mut cm = [[0usize; 2]; 2];
        let acc = evaluate_backbone(&model, epochs, test, Some(&mut cm))?;
        Ok((acc, cm))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{epoch_trials, stratified_split, synth_hybrid_dataset};
    use crate::signal::Modality;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::param(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn adam_first_step_closed_form() {
        let p = scalar_param(0.3);
        let loss = p.sum();
        loss.backward().unwrap();
        let mut adam = AdamState::new(1e-3);
        adam.step(&[("p".into(), p.clone())]).unwrap();
        // m_hat = 1, v_hat = 1 on step one, so the update is -lr/(1+eps).
        let delta = p.to_vec()[0] - 0.3;
        assert!((delta + 1e-3).abs() < 1e-6, "delta {delta}");
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let p = scalar_param(0.7);
        let loss = p.scale(0.0).sum();
        loss.backward().unwrap();
        let mut adam = AdamState::new(1e-3);
        adam.step(&[("p".into(), p.clone())]).unwrap();
        assert_eq!(p.to_vec()[0], 0.7);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_step_opposes_gradient_sign() {
        let p = Tensor::param(vec![4], vec![0.0; 4]).unwrap();
        let c = Tensor::new(vec![4], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        let loss = p.mul(&c).unwrap().sum();
        loss.backward().unwrap();
        let mut adam = AdamState::new(1e-3);
        adam.step(&[("p".into(), p.clone())]).unwrap();
        let g = [1.0, -2.0, 3.0, -4.0];
        for (w, g) in p.to_vec().iter().zip(g) {
            assert!(w * g < 0.0, "update {w} should oppose gradient {g}");
        }
    }

    fn tiny_dataset(snr: f64, seed: u64) -> (Vec<Epoch>, SplitIndices) {
        let trials = synth_hybrid_dataset(10, seed, snr).unwrap();
        let mut epochs = epoch_trials(&trials, Modality::Eeg).unwrap();
        // Shrink to an 8x16 input so unit tests stay fast: keep 8 channels
        // and downsample the window by 16.
        for e in &mut epochs {
            let mut small = Vec::with_capacity(8 * 16);
            for c in 0..8 {
                for t in 0..16 {
                    small.push(e.data[c * e.window + t * 16]);
                }
            }
            e.data = small;
            e.channels = 8;
            e.window = 16;
        }
        let labels: Vec<EpochLabel> = epochs.iter().map(|e| e.label).collect();
        let split = stratified_split(&labels, [0.70, 0.15, 0.15], seed).unwrap();
        (epochs, split)
    }

    fn tiny_config() -> BackboneConfig {
        BackboneConfig::new(8, 16, vec![4, 8])
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let (epochs, split) = tiny_dataset(2.0, 3);
        let tc = TrainConfig {
            epochs: 3,
            lr: 0.0,
            seed: 3,
            shuffle: false,
            ..TrainConfig::default()
        };
        let (_, history) = train_backbone(&tiny_config(), &epochs, &split, &tc).unwrap();
        for h in &history {
            assert!((h.train_loss - history[0].train_loss).abs() < 1e-12);
        }
    }

    #[test]
    fn first_epoch_loss_near_chance() {
        let (epochs, split) = tiny_dataset(2.0, 4);
        let tc = TrainConfig {
            epochs: 1,
            seed: 4,
            ..TrainConfig::default()
        };
        let (_, history) = train_backbone(&tiny_config(), &epochs, &split, &tc).unwrap();
        assert!(
            history[0].train_loss <= (2.0f64).ln() + 0.1,
            "loss {}",
            history[0].train_loss
        );
    }

    #[test]
    fn training_reduces_loss() {
        let (epochs, split) = tiny_dataset(2.0, 5);
        let tc = TrainConfig {
            epochs: 10,
            lr: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let (_, history) = train_backbone(&tiny_config(), &epochs, &split, &tc).unwrap();
        assert!(
            history[9].train_loss < history[0].train_loss,
            "loss went {} -> {}",
            history[0].train_loss,
            history[9].train_loss
        );
    }

    #[test]
    fn same_seed_identical_parameters() {
        let (epochs, split) = tiny_dataset(2.0, 6);
        let tc = TrainConfig {
            epochs: 2,
            seed: 6,
            ..TrainConfig::default()
        };
        let (a, _) = train_backbone(&tiny_config(), &epochs, &split, &tc).unwrap();
        let (b, _) = train_backbone(&tiny_config(), &epochs, &split, &tc).unwrap();
        for ((_, x), (_, y)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(x.to_vec(), y.to_vec());
        }
    }

    #[test]
    fn huge_lr_errors_out() {
        let (epochs, split) = tiny_dataset(2.0, 7);
        let tc = TrainConfig {
            epochs: 5,
            lr: 1e12,
            seed: 7,
            ..TrainConfig::default()
        };
        assert!(train_backbone(&tiny_config(), &epochs, &split, &tc).is_err());
    }

    #[test]
    fn ci_known_values() {
        let (m, h) = confidence_interval(&[0.5, 0.5]).unwrap();
        assert_eq!((m, h), (0.5, 0.0));
        let (m, h) = confidence_interval(&[0.0, 1.0]).unwrap();
        assert!((m - 0.5).abs() < 1e-12);
        assert!((h - 1.96 * (0.5f64).sqrt() / (2.0f64).sqrt()).abs() < 1e-9);
        assert!((h - 0.98).abs() < 1e-9);
        let (m, h) = confidence_interval(&[0.7, 0.8, 0.9]).unwrap();
        assert!((m - 0.8).abs() < 1e-12);
        assert!((h - 1.96 * 0.1 / (3.0f64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn ci_is_linear_in_scale() {
        let accs = [0.6, 0.7, 0.95];
        let scaled: Vec<f64> = accs.iter().map(|a| a * 100.0).collect();
        let (m1, h1) = confidence_interval(&accs).unwrap();
        let (m2, h2) = confidence_interval(&scaled).unwrap();
        assert!((m2 - 100.0 * m1).abs() < 1e-9);
        assert!((h2 - 100.0 * h1).abs() < 1e-9);
    }

    #[test]
    fn ci_rejects_single_value() {
        assert!(matches!(
            confidence_interval(&[0.5]),
            Err(TrainError::TooFewValues(1))
        ));
    }

    #[test]
    fn cross_validate_structure() {
        let labels: Vec<EpochLabel> = (0..100)
            .map(|i| {
                if i % 2 == 0 {
                    EpochLabel::Rest
                } else {
                    EpochLabel::Task
                }
            })
            .collect();
        let mut seen = vec![0usize; 100];
        let report = cross_validate(&labels, 5, 1, |_, train, test| {
            assert_eq!(train.len() + test.len(), 100);
            for &i in test {
                seen[i] += 1;
            }
            Ok((0.8, [[10, 0], [0, 10]]))
        })
        .unwrap();
        assert!(seen.iter().all(|&c| c == 1), "each epoch in exactly one test fold");
        assert!((report.mean_accuracy - 0.8).abs() < 1e-12);
        assert_eq!(report.ci_half_width, 0.0);
        assert_eq!(report.confusion, [[50, 0], [0, 50]]);
    }

    #[test]
    fn report_serialization_excludes_runtime() {
        let report = MetricsReport {
            fold_accuracies: vec![0.8, 0.9],
            mean_accuracy: 0.85,
            ci_half_width: 0.098,
            confusion: [[8, 2], [1, 9]],
            runtime_secs: 123.4,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert!(!json.contains("runtime"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.runtime_secs, 0.0);
        assert_eq!(back.fold_accuracies, report.fold_accuracies);
    }
}
