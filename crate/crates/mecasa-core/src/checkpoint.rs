//! Binary parameter checkpoints and feature caches.
//!
//! Layout: a u64 little-endian header length, a JSON header, then a flat
//! little-endian f64 payload. Checkpoint headers carry the backbone config
//! and the named tensor shapes in declared parameter order; feature-cache
//! headers carry modality, split name, epoch count, and feature dimension.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{BackboneConfig, BackboneParams};
use crate::signal::Modality;
use crate::TensorError;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("header parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("payload holds {actual} values, header declares {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("tensor {name} has shape {actual:?}, header declares {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("file too short for its declared header")]
    Truncated,
}

pub type CheckpointResult<T> = Result<T, CheckpointError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: BackboneConfig,
    pub tensors: Vec<(String, Vec<usize>)>,
}

fn write_blob(path: &Path, header_json: &[u8], payload: &[f64]) -> CheckpointResult<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(header_json)?;
    let mut bytes = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&bytes)?;
    Ok(())
}

fn read_blob(path: &Path) -> CheckpointResult<(Vec<u8>, Vec<f64>)> {
    let mut f = fs::File::open(path)?;
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(|_| CheckpointError::Truncated)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    f.read_exact(&mut header).map_err(|_| CheckpointError::Truncated)?;
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(CheckpointError::Truncated);
    }
    let payload = rest
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

/// Serialize model parameters in declared order.
pub fn save_checkpoint(path: &Path, params: &BackboneParams) -> CheckpointResult<()> {
    let named = params.params();
    let header = CheckpointHeader {
        config: params.config.clone(),
        tensors: named
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect(),
    };
    let mut payload = Vec::new();
    for (_, t) in &named {
        payload.extend(t.to_vec());
    }
    write_blob(path, &serde_json::to_vec(&header)?, &payload)
}

/// Rebuild a model from a checkpoint, validating shapes and total length.
pub fn load_checkpoint(path: &Path) -> CheckpointResult<BackboneParams> {
    let (header_bytes, payload) = read_blob(path)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let params = BackboneParams::init(&header.config, &mut rng)?;
    let named = params.params();
    let expected: usize = header
        .tensors
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if payload.len() != expected {
        return Err(CheckpointError::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    let mut offset = 0;
    for ((name, shape), (_, t)) in header.tensors.iter().zip(named.iter()) {
        if t.shape() != shape.as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                actual: t.shape().to_vec(),
            });
        }
        let n: usize = shape.iter().product();
        t.set_data(&payload[offset..offset + n]);
        offset += n;
    }
    Ok(params)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureCacheHeader {
    pub modality: Modality,
    pub split: String,
    pub epoch_count: usize,
    pub feature_dim: usize,
    pub labels: Vec<usize>,
}

/// Persist per-epoch feature vectors for one modality and split.
pub fn save_features(
    path: &Path,
    modality: Modality,
    split: &str,
    features: &[Vec<f64>],
    labels: &[usize],
) -> CheckpointResult<()> {
    let dim = features.first().map(|f| f.len()).unwrap_or(0);
    let header = FeatureCacheHeader {
        modality,
        split: split.to_string(),
        epoch_count: features.len(),
        feature_dim: dim,
        labels: labels.to_vec(),
    };
    let mut payload = Vec::with_capacity(features.len() * dim);
    for f in features {
        payload.extend_from_slice(f);
    }
    write_blob(path, &serde_json::to_vec(&header)?, &payload)
}

pub fn load_features(
    path: &Path,
) -> CheckpointResult<(FeatureCacheHeader, Vec<Vec<f64>>)> {
    let (header_bytes, payload) = read_blob(path)?;
    let header: FeatureCacheHeader = serde_json::from_slice(&header_bytes)?;
    let expected = header.epoch_count * header.feature_dim;
    if payload.len() != expected {
        return Err(CheckpointError::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    let features = payload
        .chunks_exact(header.feature_dim.max(1))
        .map(|c| c.to_vec())
        .collect();
    Ok((header, features))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochCacheHeader {
    pub modality: Modality,
    /// Representation tag, e.g. "eeg", "od128", "hbt", "od10".
    pub repr: String,
    pub channels: usize,
    pub window: usize,
    pub epoch_count: usize,
    pub labels: Vec<usize>,
    pub trial_ids: Vec<u32>,
}

/// Persist preprocessed epochs as one blob: header plus flat (B, C, W)
/// payload.
pub fn save_epochs(
    path: &Path,
    modality: Modality,
    repr: &str,
    epochs: &[crate::signal::Epoch],
) -> CheckpointResult<()> {
    let (channels, window) = epochs
        .first()
        .map(|e| (e.channels, e.window))
        .unwrap_or((0, 0));
    let header = EpochCacheHeader {
        modality,
        repr: repr.to_string(),
        channels,
        window,
        epoch_count: epochs.len(),
        labels: epochs
            .iter()
            .map(|e| match e.label {
                crate::signal::EpochLabel::Rest => 0,
                crate::signal::EpochLabel::Task => 1,
            })
            .collect(),
        trial_ids: epochs.iter().map(|e| e.trial_id).collect(),
    };
    let mut payload = Vec::with_capacity(epochs.len() * channels * window);
    for e in epochs {
        payload.extend_from_slice(&e.data);
    }
    write_blob(path, &serde_json::to_vec(&header)?, &payload)
}

pub fn load_epochs(
    path: &Path,
) -> CheckpointResult<(EpochCacheHeader, Vec<crate::signal::Epoch>)> {
    let (header_bytes, payload) = read_blob(path)?;
    let header: EpochCacheHeader = serde_json::from_slice(&header_bytes)?;
    let per = header.channels * header.window;
    let expected = header.epoch_count * per;
    if payload.len() != expected {
        return Err(CheckpointError::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    let epochs = (0..header.epoch_count)
        .map(|i| crate::signal::Epoch {
            data: payload[i * per..(i + 1) * per].to_vec(),
            channels: header.channels,
            window: header.window,
            label: if header.labels[i] == 0 {
                crate::signal::EpochLabel::Rest
            } else {
                crate::signal::EpochLabel::Task
            },
            subject_id: 0,
            trial_id: header.trial_ids[i],
        })
        .collect();
    Ok((header, epochs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_model(seed: u64) -> BackboneParams {
        let cfg = BackboneConfig::new(8, 16, vec![4, 8]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        BackboneParams::init(&cfg, &mut rng).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small_model(42);
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        for ((na, a), (nb, b)) in model.params().iter().zip(loaded.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.to_vec(), b.to_vec(), "tensor {na}");
        }
        assert_eq!(loaded.config.stage_dims, vec![4, 8]);
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &small_model(1)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::PayloadLength { .. })
        ));
    }

    #[test]
    fn garbage_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut bytes = 5u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"hello");
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Json(_))
        ));
    }

    #[test]
    fn epoch_cache_round_trip() {
        use crate::signal::{Epoch, EpochLabel};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eeg.epochs");
        let epochs = vec![
            Epoch {
                data: vec![1.0, 2.0, 3.0, 4.0],
                channels: 2,
                window: 2,
                label: EpochLabel::Rest,
                subject_id: 0,
                trial_id: 3,
            },
            Epoch {
                data: vec![5.0, 6.0, 7.0, 8.0],
                channels: 2,
                window: 2,
                label: EpochLabel::Task,
                subject_id: 0,
                trial_id: 4,
            },
        ];
        save_epochs(&path, Modality::Eeg, "eeg", &epochs).unwrap();
        let (header, loaded) = load_epochs(&path).unwrap();
        assert_eq!(header.repr, "eeg");
        assert_eq!(header.labels, vec![0, 1]);
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[1].data, epochs[1].data);
        assert_eq!(loaded[1].label, EpochLabel::Task);
        assert_eq!(loaded[0].trial_id, 3);
    }

    #[test]
    fn feature_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.feat");
        let features = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let labels = vec![0, 1];
        save_features(&path, Modality::Eeg, "train", &features, &labels).unwrap();
        let (header, loaded) = load_features(&path).unwrap();
        assert_eq!(header.modality, Modality::Eeg);
        assert_eq!(header.split, "train");
        assert_eq!(header.epoch_count, 2);
        assert_eq!(header.feature_dim, 3);
        assert_eq!(header.labels, labels);
        assert_eq!(loaded, features);
    }
}
