//! The MECASA encoder: stem, staged blocks (integration subnet -> CASA ->
//! MLP, each with a residual shortcut), patch-embedding downsampling between
//! stages, and a global-pool + linear classification head.
//!
//! No normalization layers are inserted; the preprocessing pipeline hands the
//! model standardized epochs. The feature vector before the head is the
//! fusion hand-off.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::attention::{casa_forward, init_param, CasaParams};
use crate::error::{TensorError, TensorResult};
use crate::tensor::kernels::conv_out_extent;
use crate::tensor::Tensor;

/// Architecture hyperparameters. Two stages with dims `[C1, C2]` is the
/// default; the stage count follows `stage_dims`, so deeper variants are a
/// config change.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Electrode/channel axis of the input epoch.
    pub input_height: usize,
    /// Time-sample axis of the input epoch.
    pub input_width: usize,
    pub stage_dims: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub mlp_ratio: f64,
    pub num_classes: usize,
}

impl BackboneConfig {
    pub fn new(input_height: usize, input_width: usize, stage_dims: Vec<usize>) -> BackboneConfig {
        let stages = stage_dims.len();
        BackboneConfig {
            in_channels: 1,
            input_height,
            input_width,
            stage_dims,
            blocks_per_stage: vec![2; stages],
            mlp_ratio: 2.0,
            num_classes: 2,
        }
    }

    pub fn validate(&self) -> TensorResult<()> {
        if self.stage_dims.is_empty() || self.stage_dims.len() != self.blocks_per_stage.len() {
            return Err(TensorError::DimMismatch {
                axis: 0,
                left: self.stage_dims.len(),
                right: self.blocks_per_stage.len(),
                context: "stage_dims vs blocks_per_stage".into(),
            });
        }
        if self.input_height < 4 || self.input_width < 4 {
            return Err(TensorError::KernelFit {
                extent: self.input_height.min(self.input_width),
                kernel: 3,
                padding: 1,
            });
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.stage_dims.last().unwrap()
    }
}

pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvLayer {
    fn init(
        cout: usize,
        cin: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> ConvLayer {
        let fan_in = cin / groups * k * k;
        ConvLayer {
            weight: init_param(vec![cout, cin / groups, k, k], fan_in, rng),
            bias: Tensor::param(vec![cout], vec![0.0; cout]).unwrap(),
            stride,
            padding,
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor) -> TensorResult<Tensor> {
        x.conv2d(
            &self.weight,
            Some(&self.bias),
            self.stride,
            self.padding,
            self.groups,
        )
    }
}

pub struct BlockParams {
    /// Three depthwise 3x3 convolutions of the integration subnet.
    pub integration: [ConvLayer; 3],
    pub casa: CasaParams,
    /// Pointwise expansion and projection of the MLP.
    pub mlp_up: ConvLayer,
    pub mlp_down: ConvLayer,
}

pub struct BackboneParams {
    pub config: BackboneConfig,
    pub stem: [ConvLayer; 2],
    pub stages: Vec<Vec<BlockParams>>,
    /// One stride-2 convolution per stage transition.
    pub patch_embeds: Vec<ConvLayer>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl BackboneParams {
    pub fn init(config: &BackboneConfig, rng: &mut impl Rng) -> TensorResult<BackboneParams> {
        config.validate()?;
        let c1 = config.stage_dims[0];
        let stem = [
            ConvLayer::init(c1, config.in_channels, 3, 2, 1, 1, rng),
            ConvLayer::init(c1, c1, 3, 2, 1, 1, rng),
        ];
        let mut stages = Vec::new();
        for (si, &c) in config.stage_dims.iter().enumerate() {
            let hidden = (config.mlp_ratio * c as f64).ceil() as usize;
            let blocks = (0..config.blocks_per_stage[si])
                .map(|_| BlockParams {
                    integration: [
                        ConvLayer::init(c, c, 3, 1, 1, c, rng),
                        ConvLayer::init(c, c, 3, 1, 1, c, rng),
                        ConvLayer::init(c, c, 3, 1, 1, c, rng),
                    ],
                    casa: CasaParams::init(c, rng),
                    mlp_up: ConvLayer::init(hidden, c, 1, 1, 0, 1, rng),
                    mlp_down: ConvLayer::init(c, hidden, 1, 1, 0, 1, rng),
                })
                .collect();
            stages.push(blocks);
        }
        let patch_embeds = config
            .stage_dims
            .windows(2)
            .map(|w| ConvLayer::init(w[1], w[0], 3, 2, 1, 1, rng))
            .collect();
        let c_last = config.feature_dim();
        Ok(BackboneParams {
            config: config.clone(),
            stem,
            stages,
            patch_embeds,
            head_weight: init_param(vec![config.num_classes, c_last], c_last, rng),
            head_bias: Tensor::param(vec![config.num_classes], vec![0.0; config.num_classes])
                .unwrap(),
        })
    }

    /// Parameters in declared (checkpoint) order.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.stem.iter().enumerate() {
            out.push((format!("stem.{i}.weight"), layer.weight.clone()));
            out.push((format!("stem.{i}.bias"), layer.bias.clone()));
        }
        for (si, blocks) in self.stages.iter().enumerate() {
            for (bi, block) in blocks.iter().enumerate() {
                let prefix = format!("stage.{si}.block.{bi}");
                for (di, dw) in block.integration.iter().enumerate() {
                    out.push((format!("{prefix}.integration.{di}.weight"), dw.weight.clone()));
                    out.push((format!("{prefix}.integration.{di}.bias"), dw.bias.clone()));
                }
                for (name, t) in block.casa.params() {
                    out.push((format!("{prefix}.casa.{name}"), t));
                }
                out.push((format!("{prefix}.mlp.up.weight"), block.mlp_up.weight.clone()));
                out.push((format!("{prefix}.mlp.up.bias"), block.mlp_up.bias.clone()));
                out.push((format!("{prefix}.mlp.down.weight"), block.mlp_down.weight.clone()));
                out.push((format!("{prefix}.mlp.down.bias"), block.mlp_down.bias.clone()));
            }
            if si + 1 < self.stages.len() {
                let pe = &self.patch_embeds[si];
                out.push((format!("patch_embed.{si}.weight"), pe.weight.clone()));
                out.push((format!("patch_embed.{si}.bias"), pe.bias.clone()));
            }
        }
        out.push(("head.weight".into(), self.head_weight.clone()));
        out.push(("head.bias".into(), self.head_bias.clone()));
        out
    }
}

/// Two stride-2 convolutions with ReLU between them.
pub fn stem_forward(x: &Tensor, params: &BackboneParams) -> TensorResult<Tensor> {
    let y = params.stem[0].forward(x)?.relu();
    params.stem[1].forward(&y)
}

/// x + DW3(ReLU(DW2(ReLU(DW1(x))))); depthwise, so no channel mixing in the
/// branch.
pub fn integration_subnet(x: &Tensor, block: &BlockParams) -> TensorResult<Tensor> {
    let y = block.integration[0].forward(x)?.relu();
    let y = block.integration[1].forward(&y)?.relu();
    let y = block.integration[2].forward(&y)?;
    x.add(&y)
}

fn mlp_forward(x: &Tensor, block: &BlockParams) -> TensorResult<Tensor> {
    let y = block.mlp_up.forward(x)?.relu();
    block.mlp_down.forward(&y)
}

/// One encoder block: integration subnet, then residual CASA, then residual
/// MLP.
pub fn mecasa_block(x: &Tensor, block: &BlockParams) -> TensorResult<Tensor> {
    let y1 = integration_subnet(x, block)?;
    let y2 = y1.add(&casa_forward(&y1, &block.casa)?)?;
    y2.add(&mlp_forward(&y2, block)?)
}

/// Stride-2 convolution changing channel width between stages.
pub fn patch_embed(x: &Tensor, layer: &ConvLayer) -> TensorResult<Tensor> {
    layer.forward(x)
}

/// Full encoder. Returns the pooled feature vector (the fusion hand-off) and
/// the classification logits.
pub fn backbone_forward(x: &Tensor, params: &BackboneParams) -> TensorResult<(Tensor, Tensor)> {
    let cfg = &params.config;
    if x.shape().len() != 4
        || x.shape()[1] != cfg.in_channels
        || x.shape()[2] != cfg.input_height
        || x.shape()[3] != cfg.input_width
    {
        return Err(TensorError::DimMismatch {
            axis: 2,
            left: if x.shape().len() == 4 { x.shape()[2] } else { 0 },
            right: cfg.input_height,
            context: format!(
                "backbone input {:?} vs config ({}, {}, {})",
                x.shape(),
                cfg.in_channels,
                cfg.input_height,
                cfg.input_width
            ),
        });
    }
    let mut y = stem_forward(x, params)?;
    for (si, blocks) in params.stages.iter().enumerate() {
        for block in blocks {
            y = mecasa_block(&y, block)?;
        }
        if si + 1 < params.stages.len() {
            y = patch_embed(&y, &params.patch_embeds[si])?;
        }
    }
    let features = y.global_avg_pool()?;
    let logits = features.linear(&params.head_weight, Some(&params.head_bias))?;
    Ok((features, logits))
}

/// Expected feature-map shapes through the network, computed without running
/// it. Used by the shape audit.
pub fn expected_shapes(cfg: &BackboneConfig) -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    let mut h = conv_out_extent(cfg.input_height, 3, 2, 1);
    let mut w = conv_out_extent(cfg.input_width, 3, 2, 1);
    h = conv_out_extent(h, 3, 2, 1);
    w = conv_out_extent(w, 3, 2, 1);
    shapes.push(("stem".into(), vec![cfg.stage_dims[0], h, w]));
    for (si, &c) in cfg.stage_dims.iter().enumerate() {
        shapes.push((format!("stage.{si}"), vec![c, h, w]));
        if si + 1 < cfg.stage_dims.len() {
            h = conv_out_extent(h, 3, 2, 1);
            w = conv_out_extent(w, 3, 2, 1);
            shapes.push((format!("patch_embed.{si}"), vec![cfg.stage_dims[si + 1], h, w]));
        }
    }
    shapes.push(("features".into(), vec![cfg.feature_dim()]));
    shapes.push(("logits".into(), vec![cfg.num_classes]));
    shapes
}

/// Run a single dummy epoch through a freshly initialized model and verify
/// every stage shape against the conv arithmetic.
pub fn shape_audit(cfg: &BackboneConfig) -> TensorResult<Vec<(String, Vec<usize>)>> {
    cfg.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let params = BackboneParams::init(cfg, &mut rng)?;
    let x = Tensor::zeros(vec![1, cfg.in_channels, cfg.input_height, cfg.input_width]);

    let expected = expected_shapes(cfg);
    let mut y = stem_forward(&x, &params)?;
    let mut audit = vec![("stem".to_string(), y.shape()[1..].to_vec())];
    for (si, blocks) in params.stages.iter().enumerate() {
        for block in blocks {
            y = mecasa_block(&y, block)?;
        }
        audit.push((format!("stage.{si}"), y.shape()[1..].to_vec()));
        if si + 1 < params.stages.len() {
            y = patch_embed(&y, &params.patch_embeds[si])?;
            audit.push((format!("patch_embed.{si}"), y.shape()[1..].to_vec()));
        }
    }
    let features = y.global_avg_pool()?;
    let logits = features.linear(&params.head_weight, Some(&params.head_bias))?;
    audit.push(("features".into(), features.shape()[1..].to_vec()));
    audit.push(("logits".into(), logits.shape()[1..].to_vec()));

    for ((name_a, shape_a), (name_e, shape_e)) in audit.iter().zip(expected.iter()) {
        if name_a != name_e || shape_a != shape_e {
            return Err(TensorError::DimMismatch {
                axis: 0,
                left: shape_a.first().copied().unwrap_or(0),
                right: shape_e.first().copied().unwrap_or(0),
                context: format!("shape audit {name_a}: got {shape_a:?}, expected {shape_e:?}"),
            });
        }
    }
    Ok(audit)
}
