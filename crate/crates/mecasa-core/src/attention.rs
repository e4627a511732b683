//! Convolutional additive self-attention (CASA), a softmax-attention oracle,
//! and an analytic model of the elementary-op cost of both.
//!
//! CASA treats a feature map `[B,C,H,W]` as N = H*W tokens of dimension
//! d = C. Query/key/value come from independent pointwise (1x1)
//! convolutions. Each of Q and K passes through a context map
//! `phi(x) = channel_gate(spatial_gate(x))`, the two gated results are summed,
//! mixed by a pointwise integration convolution, and multiplied with V.
//!
//! The product with V is ELEMENTWISE, not a matrix product. A matrix product
//! would cost O(N^2); the elementwise reading keeps every intermediate at
//! N*d elements and the whole unit linear in N.

use rand::Rng;

use crate::error::{TensorError, TensorResult};
use crate::tensor::Tensor;

/// Learnable weights of one CASA unit for channel count `channels`.
///
/// Parameter count depends only on the channel count, never on the spatial
/// size of the input.
pub struct CasaParams {
    pub channels: usize,
    /// Pointwise projection weights, shape [C, C, 1, 1] each.
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub b_q: Tensor,
    pub b_k: Tensor,
    pub b_v: Tensor,
    /// Depthwise 3x3 kernel of the spatial gate, shape [C, 1, 3, 3].
    pub spatial_kernel: Tensor,
    pub spatial_bias: Tensor,
    /// Squeeze weights of the channel gate: pooled [B,C] -> gate logits.
    pub channel_weight: Tensor,
    pub channel_bias: Tensor,
    /// Pointwise integration weights, shape [C, C, 1, 1].
    pub gamma: Tensor,
    pub gamma_bias: Tensor,
}

impl CasaParams {
    pub fn init(channels: usize, rng: &mut impl Rng) -> CasaParams {
        let c = channels;
        CasaParams {
            channels: c,
            w_q: init_param(vec![c, c, 1, 1], c, rng),
            w_k: init_param(vec![c, c, 1, 1], c, rng),
            w_v: init_param(vec![c, c, 1, 1], c, rng),
            b_q: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
            b_k: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
            b_v: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
            spatial_kernel: init_param(vec![c, 1, 3, 3], 9, rng),
            spatial_bias: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
            channel_weight: init_param_2d(vec![c, c], c, rng),
            channel_bias: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
            gamma: init_param(vec![c, c, 1, 1], c, rng),
            gamma_bias: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
        }
    }

    /// All-zero weights; with these every gate sits at 0.5 and the unit
    /// outputs zero (useful for closed-form tests).
    pub fn zeros(channels: usize) -> CasaParams {
        let c = channels;
        let z4 = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::param(shape, vec![0.0; n]).unwrap()
        };
        CasaParams {
            channels: c,
            w_q: z4(vec![c, c, 1, 1]),
            w_k: z4(vec![c, c, 1, 1]),
            w_v: z4(vec![c, c, 1, 1]),
            b_q: z4(vec![c]),
            b_k: z4(vec![c]),
            b_v: z4(vec![c]),
            spatial_kernel: z4(vec![c, 1, 3, 3]),
            spatial_bias: z4(vec![c]),
            channel_weight: z4(vec![c, c]),
            channel_bias: z4(vec![c]),
            gamma: z4(vec![c, c, 1, 1]),
            gamma_bias: z4(vec![c]),
        }
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("w_q".into(), self.w_q.clone()),
            ("b_q".into(), self.b_q.clone()),
            ("w_k".into(), self.w_k.clone()),
            ("b_k".into(), self.b_k.clone()),
            ("w_v".into(), self.w_v.clone()),
            ("b_v".into(), self.b_v.clone()),
            ("spatial_kernel".into(), self.spatial_kernel.clone()),
            ("spatial_bias".into(), self.spatial_bias.clone()),
            ("channel_weight".into(), self.channel_weight.clone()),
            ("channel_bias".into(), self.channel_bias.clone()),
            ("gamma".into(), self.gamma.clone()),
            ("gamma_bias".into(), self.gamma_bias.clone()),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn init_param(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(shape, data).unwrap()
}

pub(crate) fn init_param_2d(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    init_param(shape, fan_in, rng)
}

fn check_channels(x: &Tensor, p: &CasaParams) -> TensorResult<()> {
    if x.shape().len() != 4 {
        return Err(TensorError::Rank {
            expected: 4,
            shape: x.shape().to_vec(),
            context: "casa input".into(),
        });
    }
    if x.shape()[1] != p.channels {
        return Err(TensorError::DimMismatch {
            axis: 1,
            left: x.shape()[1],
            right: p.channels,
            context: "casa channel count".into(),
        });
    }
    Ok(())
}

/// Independent pointwise projections of the input into Q, K, V.
pub fn project_qkv(x: &Tensor, p: &CasaParams) -> TensorResult<(Tensor, Tensor, Tensor)> {
    check_channels(x, p)?;
    let q = x.conv2d(&p.w_q, Some(&p.b_q), 1, 0, 1)?;
    let k = x.conv2d(&p.w_k, Some(&p.b_k), 1, 0, 1)?;
    let v = x.conv2d(&p.w_v, Some(&p.b_v), 1, 0, 1)?;
    Ok((q, k, v))
}

/// x * sigmoid(depthwise3x3(x)): per-channel spatial gating.
pub fn spatial_attention(x: &Tensor, p: &CasaParams) -> TensorResult<Tensor> {
    let gate = x
        .conv2d(&p.spatial_kernel, Some(&p.spatial_bias), 1, 1, p.channels)?
        .sigmoid();
    x.mul(&gate)
}

/// x * broadcast(sigmoid(squeeze(global_avg_pool(x)))): one scalar gate per
/// channel.
pub fn channel_attention(x: &Tensor, p: &CasaParams) -> TensorResult<Tensor> {
    let pooled = x.global_avg_pool()?;
    let gate = pooled
        .linear(&p.channel_weight, Some(&p.channel_bias))?
        .sigmoid();
    x.mul(&gate)
}

/// Context map: channel gating applied after spatial gating.
pub fn context_map(x: &Tensor, p: &CasaParams) -> TensorResult<Tensor> {
    channel_attention(&spatial_attention(x, p)?, p)
}

/// Full CASA unit: gamma(phi(Q) + phi(K)) * V, elementwise with V.
pub fn casa_forward(x: &Tensor, p: &CasaParams) -> TensorResult<Tensor> {
    let (q, k, v) = project_qkv(x, p)?;
    let phi_q = context_map(&q, p)?;
    let phi_k = context_map(&k, p)?;
    let mixed = phi_q.add(&phi_k)?.conv2d(&p.gamma, Some(&p.gamma_bias), 1, 0, 1)?;
    mixed.mul(&v)
}

/// Exact softmax attention on token matrices `[N, d]`:
/// `O = softmax(Q K^T / sqrt(d)) V`.
///
/// Oracle for complexity comparison and small-N identity checks; not part of
/// the model forward path. Costs O(N^2 d) and reports that cost to the
/// elementary-op counter.
pub fn softmax_attention(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize) -> Vec<f64> {
    assert_eq!(q.len(), n * d);
    assert_eq!(k.len(), n * d);
    assert_eq!(v.len(), n * d);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; n * d];
    let mut scores = vec![0.0; n];
    for i in 0..n {
        let qi = &q[i * d..(i + 1) * d];
        let mut max = f64::NEG_INFINITY;
        for (j, s) in scores.iter_mut().enumerate() {
            let kj = &k[j * d..(j + 1) * d];
            let mut dot = 0.0;
            for t in 0..d {
                dot += qi[t] * kj[t];
            }
            *s = dot * scale;
            max = max.max(*s);
        }
        let mut sum = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        let inv = 1.0 / sum;
        let row = &mut out[i * d..(i + 1) * d];
        for (j, s) in scores.iter().enumerate() {
            let w = s * inv;
            let vj = &v[j * d..(j + 1) * d];
            for t in 0..d {
                row[t] += w * vj[t];
            }
        }
    }
    crate::tensor::kernels::record_ops(flop_count(AttentionKind::Softmax, n, d));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Casa,
    Softmax,
}

/// Analytic elementary-op count of one attention application on N tokens of
/// dimension d (batch 1). Mirrors exactly the per-kernel counts recorded by
/// the instrumented compute path.
pub fn flop_count(kind: AttentionKind, n: usize, d: usize) -> u64 {
    let n = n as u64;
    let d = d as u64;
    match kind {
        AttentionKind::Casa => {
            // q/k/v projections: pointwise conv with bias.
            let proj = 3 * n * d * (d + 1);
            // spatial gate on Q and K: depthwise 3x3 + bias, sigmoid, product.
            let spatial = 2 * (n * d * 10 + n * d + n * d);
            // channel gate on Q and K: pool, squeeze linear + bias, sigmoid,
            // broadcast product.
            let channel = 2 * (n * d + d * (d + 1) + d + n * d);
            // phi(Q)+phi(K), gamma pointwise conv with bias, product with V.
            let combine = n * d + n * d * (d + 1) + n * d;
            proj + spatial + channel + combine
        }
        AttentionKind::Softmax => {
            // scores N^2*d MACs, scale, exp, normalize, then weighted sum.
            2 * n * n * d + 3 * n * n
        }
    }
}

/// Smallest N at which softmax attention costs more than CASA, if any exists
/// below `limit`.
pub fn flop_crossover(d: usize, limit: usize) -> Option<usize> {
    (1..=limit).find(|&n| {
        flop_count(AttentionKind::Softmax, n, d) > flop_count(AttentionKind::Casa, n, d)
    })
}
