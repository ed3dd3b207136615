use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentencePooling {
    /// State at the end-of-sequence token.
    Eos,
    /// Mean over non-padding tokens.
    Mean,
}

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    /// Channel width of the four encoder stages.
    pub vision_channels: [usize; 4],
    pub vision_depths: [usize; 4],
    pub vision_heads: [usize; 4],
    pub mlp_ratio: usize,
    pub text_dim: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub max_len: usize,
    /// Shared vision-language channel width.
    pub joint_dim: usize,
    pub fusion_heads: usize,
    /// Vision-path blocks per scale.
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    /// Channels of the stride-2 detail stem; 0 keeps the output at stride 4.
    #[serde(default)]
    pub detail_channels: usize,
    pub sentence_pooling: SentencePooling,
    /// Learn the similarity scale instead of fixing it at 1/√C.
    pub learnable_temperature: bool,
    pub vocab_path: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Default CPU-scale configuration.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            patch_size: 4,
            vision_channels: [32, 64, 128, 256],
            vision_depths: [1, 1, 1, 1],
            vision_heads: [2, 4, 4, 8],
            mlp_ratio: 2,
            text_dim: 64,
            text_layers: 2,
            text_heads: 4,
            max_len: 20,
            joint_dim: 64,
            fusion_heads: 4,
            decoder_depth: 1,
            decoder_heads: 4,
            detail_channels: 16,
            sentence_pooling: SentencePooling::Eos,
            learnable_temperature: false,
            vocab_path: None,
        }
    }

    /// Smallest useful configuration, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 32,
            patch_size: 4,
            vision_channels: [8, 8, 16, 16],
            vision_depths: [1, 1, 1, 1],
            vision_heads: [2, 2, 2, 2],
            mlp_ratio: 2,
            text_dim: 16,
            text_layers: 1,
            text_heads: 2,
            max_len: 8,
            joint_dim: 16,
            fusion_heads: 2,
            decoder_depth: 1,
            decoder_heads: 2,
            detail_channels: 8,
            sentence_pooling: SentencePooling::Eos,
            learnable_temperature: false,
            vocab_path: None,
        }
    }

    /// Full-resolution preset (480×480 input).
    pub fn large() -> Self {
        Self {
            image_size: 480,
            vision_channels: [128, 256, 512, 1024],
            vision_depths: [2, 2, 18, 2],
            vision_heads: [4, 8, 16, 32],
            mlp_ratio: 4,
            text_dim: 512,
            text_layers: 12,
            text_heads: 8,
            max_len: 20,
            joint_dim: 256,
            fusion_heads: 8,
            decoder_heads: 8,
            detail_channels: 0,
            ..Self::desk()
        }
    }

    /// Total downsampling of the coarsest level.
    pub fn max_stride(&self) -> usize {
        self.patch_size * 8
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !self.image_size.is_multiple_of(self.max_stride()) {
            return bad(format!(
                "image_size {} not divisible by {}",
                self.image_size,
                self.max_stride()
            ));
        }
        for i in 0..4 {
            let (c, h) = (self.vision_channels[i], self.vision_heads[i]);
            if c % 4 != 0 || c % h != 0 {
                return bad(format!("stage {i}: channels {c} incompatible with heads {h} / positional table"));
            }
            if i > 0 && c < self.vision_channels[i - 1] {
                return bad("vision channels must be non-decreasing".into());
            }
        }
        if !self.joint_dim.is_multiple_of(4)
            || !self.joint_dim.is_multiple_of(self.fusion_heads)
            || !self.joint_dim.is_multiple_of(self.decoder_heads)
        {
            return bad(format!("joint_dim {} incompatible with heads", self.joint_dim));
        }
        if !self.text_dim.is_multiple_of(self.text_heads) {
            return bad(format!("text_dim {} incompatible with text_heads", self.text_dim));
        }
        if self.max_len < 3 {
            return bad("max_len must leave room for one word".into());
        }
        if self.decoder_depth == 0 {
            return bad("decoder_depth must be at least 1".into());
        }
        Ok(())
    }
}
