//! Hierarchical vision encoder.
//!
//! A strided patch embedding followed by four stages of global
//! self-attention blocks; stages 2–4 start with 2×2 patch merging, so the
//! four outputs sit at strides 4, 8, 16 and 32.

use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, Linear};

use super::config::ModelConfig;
use super::layers::{conv_cfg, grid_to_tokens, sinusoidal_2d, LayerNorm, ParamBuilder, TransformerBlock};
use crate::error::{Error, Result};

/// One level of the pyramid as `(B, h·w, C)` tokens.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub tokens: Tensor,
    pub height: usize,
    pub width: usize,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.tokens.dim(2).expect("rank-3 tokens")
    }

    pub fn batch(&self) -> usize {
        self.tokens.dim(0).expect("rank-3 tokens")
    }

    /// `(B, h, w, C)` view.
    pub fn grid(&self) -> Result<Tensor> {
        let (b, _, c) = self.tokens.dims3()?;
        Ok(self.tokens.reshape((b, self.height, self.width, c))?)
    }
}

/// Four feature levels, finest first.
#[derive(Debug, Clone)]
pub struct PyramidFeatures {
    pub levels: Vec<FeatureMap>,
}

#[derive(Debug, Clone)]
struct PatchMerge {
    norm: LayerNorm,
    reduce: Linear,
}

impl PatchMerge {
    fn forward(&self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let (b, _, c) = x.dims3()?;
        let x = x
            .reshape((b, h / 2, 2, w / 2, 2, c))?
            .permute((0, 1, 3, 4, 2, 5))?
            .contiguous()?
            .reshape((b, (h / 2) * (w / 2), 4 * c))?;
        Ok(self.reduce.forward(&self.norm.forward(&x)?)?)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    merge: Option<PatchMerge>,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    channels: usize,
}

#[derive(Debug, Clone)]
pub struct VisionEncoder {
    patch: Conv2d,
    patch_norm: LayerNorm,
    stages: Vec<Stage>,
    patch_size: usize,
}

impl VisionEncoder {
    pub fn new(pb: &ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.vision_channels;
        let patch = pb
            .pp("patch_embed")
            .conv2d(3, c[0], cfg.patch_size, conv_cfg(0, cfg.patch_size), true)?;
        let patch_norm = pb.pp("patch_norm").layer_norm(c[0])?;
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let sp = pb.pp(format!("stage{}", i + 1));
            let merge = if i == 0 {
                None
            } else {
                Some(PatchMerge {
                    norm: sp.pp("merge.norm").layer_norm(4 * c[i - 1])?,
                    reduce: sp.pp("merge.reduce").linear(4 * c[i - 1], c[i], false)?,
                })
            };
            let blocks = (0..cfg.vision_depths[i])
                .map(|d| TransformerBlock::new(&sp.pp(format!("block{d}")), c[i], cfg.vision_heads[i], cfg.mlp_ratio))
                .collect::<Result<_>>()?;
            stages.push(Stage {
                merge,
                blocks,
                norm: sp.pp("norm").layer_norm(c[i])?,
                channels: c[i],
            });
        }
        Ok(Self {
            patch,
            patch_norm,
            stages,
            patch_size: cfg.patch_size,
        })
    }

    /// Encodes `(B, 3, H, W)` images in [0, 1].
    pub fn forward(&self, images: &Tensor) -> Result<PyramidFeatures> {
        let (_, _, height, width) = images.dims4()?;
        let divisor = self.patch_size * 8;
        if height % divisor != 0 || width % divisor != 0 {
            return Err(Error::IndivisibleSize {
                height,
                width,
                divisor,
            });
        }
        let (mut h, mut w) = (height / self.patch_size, width / self.patch_size);
        let mut x = self.patch_norm.forward(&grid_to_tokens(&self.patch.forward(images)?)?)?;
        let mut levels = Vec::with_capacity(4);
        for stage in &self.stages {
            if let Some(m) = &stage.merge {
                x = m.forward(&x, h, w)?;
                h /= 2;
                w /= 2;
            }
            let pos = sinusoidal_2d(h, w, stage.channels, x.dtype(), x.device())?;
            x = x.broadcast_add(&pos)?;
            for block in &stage.blocks {
                x = block.forward(&x, None)?;
            }
            levels.push(FeatureMap {
                tokens: stage.norm.forward(&x)?,
                height: h,
                width: w,
            });
        }
        Ok(PyramidFeatures { levels })
    }
}
