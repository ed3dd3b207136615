//! Language activation of visual features.
//!
//! Each visual position queries the caption's word embeddings:
//!
//! ```text
//! f_c = P(f_v) + softmax(G_q(f_v) · G_k(f_w)ᵀ / √d) · G_v(f_w)
//! ```
//!
//! with padding tokens excluded from the keys. `P` is a residual projection
//! of the visual feature into the joint width, so the activated map still
//! carries the visual content.

use candle_core::{Module, Tensor};
use candle_nn::Linear;

use super::layers::{MultiHeadAttention, ParamBuilder};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PreFusion {
    pub visual: Linear,
    pub attn: MultiHeadAttention,
}

impl PreFusion {
    pub fn new(pb: &ParamBuilder, visual_dim: usize, text_dim: usize, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            visual: pb.pp("visual").linear(visual_dim, dim, true)?,
            attn: MultiHeadAttention::new(&pb.pp("attn"), visual_dim, text_dim, dim, heads)?,
        })
    }

    /// Activates `f_v` `(B, N, C_v)` with words `f_w` `(B, L, C_t)`; returns
    /// `f_c` `(B, N, C)` and the attention weights `(B, heads, N, L)`.
    pub fn forward_with_weights(&self, f_v: &Tensor, f_w: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let per_row = mask.sum(1)?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
        if per_row.contains(&0.0) {
            return Err(Error::EmptyEffectiveCaption);
        }
        let (readout, w) = self.attn.forward_with_weights(f_v, f_w, Some(mask))?;
        Ok(((self.visual.forward(f_v)? + readout)?, w))
    }

    pub fn forward(&self, f_v: &Tensor, f_w: &Tensor, mask: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_weights(f_v, f_w, mask)?.0)
    }
}
