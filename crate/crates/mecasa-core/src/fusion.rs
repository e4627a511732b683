//! Late-fusion classifier over concatenated EEG and fNIRS backbone features.
//!
//! Two-step protocol: the unimodal backbones are trained first, frozen, and
//! their pooled feature vectors cached; only the two fully connected layers
//! here are trained on the concatenated features. Concatenation order is
//! fixed: EEG features first, fNIRS second. The binary head uses a 2-logit
//! softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::init_param_2d;
use crate::error::{TensorError, TensorResult};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FusionConfig {
    pub d_eeg: usize,
    pub d_fnirs: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

impl FusionConfig {
    pub fn new(d_eeg: usize, d_fnirs: usize) -> FusionConfig {
        FusionConfig {
            d_eeg,
            d_fnirs,
            hidden: 64,
            num_classes: 2,
        }
    }
}

pub struct FusionParams {
    pub config: FusionConfig,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

impl FusionParams {
    pub fn init(config: &FusionConfig, rng: &mut impl Rng) -> FusionParams {
        let din = config.d_eeg + config.d_fnirs;
        FusionParams {
            config: config.clone(),
            fc1_weight: init_param_2d(vec![config.hidden, din], din, rng),
            fc1_bias: Tensor::param(vec![config.hidden], vec![0.0; config.hidden]).unwrap(),
            fc2_weight: init_param_2d(vec![config.num_classes, config.hidden], config.hidden, rng),
            fc2_bias: Tensor::param(vec![config.num_classes], vec![0.0; config.num_classes])
                .unwrap(),
        }
    }

    pub fn zeros(config: &FusionConfig) -> FusionParams {
        let din = config.d_eeg + config.d_fnirs;
        FusionParams {
            config: config.clone(),
            fc1_weight: Tensor::param(vec![config.hidden, din], vec![0.0; config.hidden * din])
                .unwrap(),
            fc1_bias: Tensor::param(vec![config.hidden], vec![0.0; config.hidden]).unwrap(),
            fc2_weight: Tensor::param(
                vec![config.num_classes, config.hidden],
                vec![0.0; config.num_classes * config.hidden],
            )
            .unwrap(),
            fc2_bias: Tensor::param(vec![config.num_classes], vec![0.0; config.num_classes])
                .unwrap(),
        }
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("fc1.weight".into(), self.fc1_weight.clone()),
            ("fc1.bias".into(), self.fc1_bias.clone()),
            ("fc2.weight".into(), self.fc2_weight.clone()),
            ("fc2.bias".into(), self.fc2_bias.clone()),
        ]
    }
}

fn check_inputs(f_eeg: &Tensor, f_fnirs: &Tensor, p: &FusionParams) -> TensorResult<()> {
    if f_eeg.shape().len() != 2 || f_fnirs.shape().len() != 2 {
        return Err(TensorError::Rank {
            expected: 2,
            shape: f_eeg.shape().to_vec(),
            context: "fusion inputs".into(),
        });
    }
    if f_eeg.shape()[0] != f_fnirs.shape()[0] {
        return Err(TensorError::DimMismatch {
            axis: 0,
            left: f_eeg.shape()[0],
            right: f_fnirs.shape()[0],
            context: "fusion batch size".into(),
        });
    }
    if f_eeg.shape()[1] != p.config.d_eeg || f_fnirs.shape()[1] != p.config.d_fnirs {
        return Err(TensorError::DimMismatch {
            axis: 1,
            left: f_eeg.shape()[1],
            right: p.config.d_eeg,
            context: "fusion feature dims vs config".into(),
        });
    }
    Ok(())
}

/// Pre-softmax logits; the training loss applies cross-entropy directly to
/// these.
pub fn fuse_logits(f_eeg: &Tensor, f_fnirs: &Tensor, p: &FusionParams) -> TensorResult<Tensor> {
    check_inputs(f_eeg, f_fnirs, p)?;
    let fused = f_eeg.concat(f_fnirs, 1)?;
    fused
        .linear(&p.fc1_weight, Some(&p.fc1_bias))?
        .relu()
        .linear(&p.fc2_weight, Some(&p.fc2_bias))
}

/// Class probabilities: softmax(fc2(relu(fc1(concat(eeg, fnirs))))).
pub fn fuse_forward(f_eeg: &Tensor, f_fnirs: &Tensor, p: &FusionParams) -> TensorResult<Tensor> {
    fuse_logits(f_eeg, f_fnirs, p)?.softmax(1)
}
