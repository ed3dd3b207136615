//! Two-stream vision-language decoder.
//!
//! The vision path runs a multi-modal transformer per scale (self-attention
//! over visual tokens concatenated with word tokens, then cross-attention
//! from the visual tokens to the words) and merges the scales with a
//! top-down feature pyramid. The language path turns the sentence embedding
//! into a content-aware prompt by attending over activated visual features.
//! The response map is the scaled inner product between the two.

use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, Linear};

use super::layers::{conv_cfg, sinusoidal_2d, upsample_bilinear, LayerNorm, MultiHeadAttention, ParamBuilder};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct VisionPathBlock {
    pub self_attn: MultiHeadAttention,
    pub self_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
}

impl VisionPathBlock {
    pub fn new(pb: &ParamBuilder, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(&pb.pp("self_attn"), dim, dim, dim, heads)?,
            self_norm: pb.pp("self_norm").layer_norm(dim)?,
            cross_attn: MultiHeadAttention::new(&pb.pp("cross_attn"), dim, dim, dim, heads)?,
            cross_norm: pb.pp("cross_norm").layer_norm(dim)?,
        })
    }

    /// Multi-modal self-attention with the word outputs dropped:
    /// `f_b = LN(MHSA([f_c + Pos; f_w])[:h·w]) + f_c`.
    pub fn self_attend(&self, f_c: &Tensor, h: usize, w: usize, words: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, n, c) = f_c.dims3()?;
        let pos = sinusoidal_2d(h, w, c, f_c.dtype(), f_c.device())?;
        let tokens = Tensor::cat(&[&f_c.broadcast_add(&pos)?, words], 1)?;
        let full_mask = Tensor::cat(&[&Tensor::ones((b, n), mask.dtype(), mask.device())?, mask], 1)?;
        let out = self.self_attn.forward(&tokens, &tokens, Some(&full_mask))?;
        let vision = out.narrow(1, 0, n)?;
        Ok((self.self_norm.forward(&vision)? + f_c)?)
    }

    /// Full block: [`Self::self_attend`], then vision→word cross-attention
    /// with a residual connection and layer norm.
    pub fn forward(&self, f_c: &Tensor, h: usize, w: usize, words: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let f_b = self.self_attend(f_c, h, w, words, mask)?;
        let cross = self.cross_attn.forward(&f_b, words, Some(mask))?;
        Ok(self.cross_norm.forward(&(f_b + cross)?)?)
    }
}

/// Top-down feature pyramid merging the decoded scales 2–4 with the raw
/// stride-4 encoder level.
#[derive(Debug, Clone)]
pub struct Fpn {
    lateral: [Conv2d; 4],
    smooth: [Conv2d; 3],
}

/// Intermediate values of [`Fpn::forward_traced`].
#[derive(Debug, Clone)]
pub struct FpnTrace {
    /// Pre-activation merge sums, coarse to fine.
    pub merges: Vec<Tensor>,
    pub output: Tensor,
}

impl Fpn {
    pub fn new(pb: &ParamBuilder, fine_dim: usize, dim: usize) -> Result<Self> {
        let lat = |i: usize, cin: usize| pb.pp(format!("lateral{i}")).conv2d(cin, dim, 1, conv_cfg(0, 1), false);
        let smooth = |i: usize| pb.pp(format!("smooth{i}")).conv2d(dim, dim, 3, conv_cfg(1, 1), false);
        Ok(Self {
            lateral: [lat(1, fine_dim)?, lat(2, dim)?, lat(3, dim)?, lat(4, dim)?],
            smooth: [smooth(1)?, smooth(2)?, smooth(3)?],
        })
    }

    /// `decoded` holds scales 2, 3, 4 as `(B, C, h, w)`; `fine` is the raw
    /// stride-4 level. Returns the stride-4 fused map and its merge sums.
    pub fn forward_traced(&self, decoded: [&Tensor; 3], fine: &Tensor) -> Result<FpnTrace> {
        let [d2, d3, d4] = decoded;
        let mut p = self.lateral[3].forward(d4)?;
        let mut merges = Vec::with_capacity(3);
        for (lat, smooth, x) in [
            (&self.lateral[2], &self.smooth[2], d3),
            (&self.lateral[1], &self.smooth[1], d2),
            (&self.lateral[0], &self.smooth[0], fine),
        ] {
            let (_, _, h, w) = x.dims4()?;
            let merged = (p.upsample_nearest2d(h, w)? + lat.forward(x)?)?;
            p = smooth.forward(&merged)?.gelu()?;
            merges.push(merged);
        }
        Ok(FpnTrace { merges, output: p })
    }

    pub fn forward(&self, decoded: [&Tensor; 3], fine: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(decoded, fine)?.output)
    }

    /// Output when scales 2–4 contribute nothing: smoothing of the fine
    /// lateral alone.
    pub fn fine_only(&self, fine: &Tensor) -> Result<Tensor> {
        Ok(self.smooth[0].forward(&self.lateral[0].forward(fine)?)?.gelu()?)
    }
}

/// Stride-2 refinement for small inputs: a strided 3×3 conv on the image,
/// merged with the upsampled FPN output and smoothed.
#[derive(Debug, Clone)]
pub struct DetailStem {
    pub stem: Conv2d,
    pub lateral: Conv2d,
    pub smooth: Conv2d,
}

impl DetailStem {
    pub fn new(pb: &ParamBuilder, channels: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            stem: pb.pp("stem").conv2d(3, channels, 3, conv_cfg(1, 2), true)?,
            lateral: pb.pp("lateral").conv2d(channels, dim, 1, conv_cfg(0, 1), false)?,
            smooth: pb.pp("smooth").conv2d(dim, dim, 3, conv_cfg(1, 1), false)?,
        })
    }

    /// `fused` `(B, C, h, w)` at stride 4, `images` `(B, 3, H, W)`; returns
    /// `(B, C, H/2, W/2)`.
    pub fn forward(&self, fused: &Tensor, images: &Tensor) -> Result<Tensor> {
        let d = self.stem.forward(images)?.gelu()?;
        let (_, _, h, w) = d.dims4()?;
        let merged = (fused.upsample_nearest2d(h, w)? + self.lateral.forward(&d)?)?;
        Ok(self.smooth.forward(&merged)?.gelu()?)
    }
}

/// Sentence-side decoder producing the content-aware prompt.
#[derive(Debug, Clone)]
pub struct LanguagePath {
    pub sentence: Linear,
    pub cross_attn: MultiHeadAttention,
    pub self_attn: MultiHeadAttention,
    pub norm: LayerNorm,
}

impl LanguagePath {
    pub fn new(pb: &ParamBuilder, text_dim: usize, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            sentence: pb.pp("sentence").linear(text_dim, dim, true)?,
            cross_attn: MultiHeadAttention::new(&pb.pp("cross_attn"), dim, dim, dim, heads)?,
            self_attn: MultiHeadAttention::new(&pb.pp("self_attn"), dim, dim, dim, heads)?,
            norm: pb.pp("norm").layer_norm(dim)?,
        })
    }

    /// Cross-attention readout of the visual tokens for sentence `f_s`.
    pub fn readout(&self, f_s: &Tensor, visual: &Tensor) -> Result<Tensor> {
        let s = self.sentence.forward(f_s)?;
        self.cross_attn.forward(&s, visual, None)
    }

    /// `f_s` `(B, 1, C_t)` and activated tokens `(B, N, C)` to the prompt
    /// `(B, 1, C)`: the readout is refined by self-attention over the pair
    /// `[f_s, readout]`, keeping the readout token.
    pub fn forward(&self, f_s: &Tensor, visual: &Tensor) -> Result<Tensor> {
        let s = self.sentence.forward(f_s)?;
        let read = self.cross_attn.forward(&s, visual, None)?;
        let pair = Tensor::cat(&[&s, &read], 1)?;
        let mixed = self.self_attn.forward(&pair, &pair, None)?.narrow(1, 1, 1)?;
        Ok((self.norm.forward(&mixed)? + read)?)
    }
}

/// Similarity logits between the fused map `(B, C, h, w)` and the prompt
/// `(B, 1, C)`, divided by `√C` and multiplied by `scale` when given.
/// Returns `(B, h, w)`.
pub fn similarity_logits(fused: &Tensor, prompt: &Tensor, scale: Option<&Tensor>) -> Result<Tensor> {
    let (b, c, h, w) = fused.dims4()?;
    let flat = fused.reshape((b, c, h * w))?;
    let logits = (prompt.matmul(&flat)? / (c as f64).sqrt())?.reshape((b, h, w))?;
    Ok(match scale {
        Some(s) => logits.broadcast_mul(s)?,
        None => logits,
    })
}

/// Low-resolution logits bilinearly resized to the image size.
pub fn upsample_logits(logits: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    upsample_bilinear(logits, height, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_abs(t: Tensor) -> f64 {
        t.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    fn mask(real: usize, len: usize) -> Tensor {
        let v: Vec<f64> = (0..len).map(|i| (i < real) as u8 as f64).collect();
        Tensor::from_vec(v, (1, len), &Device::Cpu).unwrap()
    }

    fn pb() -> ParamBuilder {
        ParamBuilder::new(4, DType::F64, &Device::Cpu)
    }

    #[test]
    fn vision_block_token_arithmetic() {
        let blk = VisionPathBlock::new(&pb(), 64, 4).unwrap();
        let f_c = randn(&[1, 16, 64], 1);
        let words = randn(&[1, 20, 64], 2);
        let out = blk.forward(&f_c, 4, 4, &words, &mask(5, 20)).unwrap();
        assert_eq!(out.dims(), &[1, 16, 64]);
        let (_, w) = {
            let pos = sinusoidal_2d(4, 4, 64, DType::F64, &Device::Cpu).unwrap();
            let tokens = Tensor::cat(&[&f_c.broadcast_add(&pos).unwrap(), &words], 1).unwrap();
            blk.self_attn.forward_with_weights(&tokens, &tokens, None).unwrap()
        };
        assert_eq!(w.dims(), &[1, 4, 36, 36]);
    }

    #[test]
    fn zero_self_attention_reduces_to_residual() {
        let mut blk = VisionPathBlock::new(&pb(), 32, 4).unwrap();
        let z = Tensor::zeros((32, 32), DType::F64, &Device::Cpu).unwrap();
        let zb = Tensor::zeros(32, DType::F64, &Device::Cpu).unwrap();
        blk.self_attn.o = Linear::new(z, Some(zb));
        let f_c = randn(&[2, 16, 32], 3);
        let f_b = blk
            .self_attend(&f_c, 4, 4, &randn(&[2, 6, 32], 4), &Tensor::ones((2, 6), DType::F64, &Device::Cpu).unwrap())
            .unwrap();
        assert_eq!(max_abs((f_b - &f_c).unwrap()), 0.0);
    }

    #[test]
    fn word_order_does_not_matter() {
        let blk = VisionPathBlock::new(&pb(), 32, 4).unwrap();
        let f_c = randn(&[1, 16, 32], 5);
        let words = randn(&[1, 8, 32], 6);
        let idx = Tensor::new(&[4u32, 2, 0, 1, 3, 5, 6, 7], &Device::Cpu).unwrap();
        let a = blk.forward(&f_c, 4, 4, &words, &mask(5, 8)).unwrap();
        let b = blk
            .forward(&f_c, 4, 4, &words.index_select(&idx, 1).unwrap(), &mask(5, 8))
            .unwrap();
        assert!(max_abs((a - b).unwrap()) < 1e-10);
    }

    fn pyramid(b: usize, c: usize, fine_c: usize, s: usize) -> ([Tensor; 3], Tensor) {
        (
            [
                randn(&[b, c, s / 2, s / 2], 11),
                randn(&[b, c, s / 4, s / 4], 12),
                randn(&[b, c, s / 8, s / 8], 13),
            ],
            randn(&[b, fine_c, s, s], 14),
        )
    }

    #[test]
    fn fpn_output_shape() {
        let fpn = Fpn::new(&pb(), 8, 16).unwrap();
        let (d, fine) = pyramid(2, 16, 8, 16);
        let out = fpn.forward([&d[0], &d[1], &d[2]], &fine).unwrap();
        assert_eq!(out.dims(), &[2, 16, 16, 16]);
    }

    #[test]
    fn fpn_zero_coarse_levels() {
        let fpn = Fpn::new(&pb(), 8, 16).unwrap();
        let (d, fine) = pyramid(1, 16, 8, 16);
        let zeros: Vec<Tensor> = d.iter().map(|t| t.zeros_like().unwrap()).collect();
        let out = fpn.forward([&zeros[0], &zeros[1], &zeros[2]], &fine).unwrap();
        assert_eq!(max_abs((out - fpn.fine_only(&fine).unwrap()).unwrap()), 0.0);
    }

    #[test]
    fn fpn_first_merge_is_linear() {
        let fpn = Fpn::new(&pb(), 8, 16).unwrap();
        let (d, fine) = pyramid(1, 16, 8, 16);
        let a = fpn.forward_traced([&d[0], &d[1], &d[2]], &fine).unwrap();
        let d2: Vec<Tensor> = d.iter().map(|t| (t * 2.0).unwrap()).collect();
        let b = fpn.forward_traced([&d2[0], &d2[1], &d2[2]], &(&fine * 2.0).unwrap()).unwrap();
        let expect = (&a.merges[0] * 2.0).unwrap();
        assert!(max_abs((&b.merges[0] - expect).unwrap()) < 1e-12);
    }

    #[test]
    fn language_path_constant_visual_readout() {
        let lp = LanguagePath::new(&pb(), 16, 32, 4).unwrap();
        let v = randn(&[1, 1, 32], 20);
        let visual = v.broadcast_as((1, 9, 32)).unwrap().contiguous().unwrap();
        let read = lp.readout(&randn(&[1, 1, 16], 21), &visual).unwrap();
        let proj = lp.cross_attn.o.forward(&lp.cross_attn.v.forward(&v).unwrap()).unwrap();
        assert!(max_abs((read - proj).unwrap()) < 1e-12);
    }

    #[test]
    fn language_path_shape_and_permutation() {
        let lp = LanguagePath::new(&pb(), 16, 32, 4).unwrap();
        let f_s = randn(&[1, 1, 16], 22);
        let visual = randn(&[1, 9, 32], 23);
        let idx = Tensor::new(&[8u32, 3, 5, 0, 1, 7, 2, 6, 4], &Device::Cpu).unwrap();
        let a = lp.forward(&f_s, &visual).unwrap();
        assert_eq!(a.dims(), &[1, 1, 32]);
        let b = lp.forward(&f_s, &visual.index_select(&idx, 1).unwrap()).unwrap();
        assert!(max_abs((a - b).unwrap()) < 1e-10);
    }

    #[test]
    fn orthogonal_prompt_gives_zero_logits() {
        // fused channel 0 only, prompt channel 1 only.
        let mut f = vec![0.0f64; 4 * 3 * 3];
        for i in 0..9 {
            f[i] = (i as f64) - 4.0;
        }
        let fused = Tensor::from_vec(f, (1, 4, 3, 3), &Device::Cpu).unwrap();
        let prompt = Tensor::from_vec(vec![0.0f64, 1.0, 0.0, 0.0], (1, 1, 4), &Device::Cpu).unwrap();
        let logits = similarity_logits(&fused, &prompt, None).unwrap();
        assert_eq!(max_abs(logits), 0.0);
    }

    #[test]
    fn aligned_position_is_argmax() {
        let (c, h, w) = (4, 3, 3);
        let target = 5;
        let mut f = vec![0.0f64; c * h * w];
        f[target] = 1.0; // channel 0 at the target position
        for p in 0..h * w {
            if p != target {
                f[h * w + p] = 1.0; // channel 1 elsewhere
            }
        }
        let fused = Tensor::from_vec(f, (1, c, h, w), &Device::Cpu).unwrap();
        let prompt = Tensor::from_vec(vec![1.0f64, 0.0, 0.0, 0.0], (1, 1, c), &Device::Cpu).unwrap();
        let logits = similarity_logits(&fused, &prompt, None).unwrap().flatten_all().unwrap();
        let v = logits.to_vec1::<f64>().unwrap();
        let arg = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        assert_eq!(arg, target);
    }
}
