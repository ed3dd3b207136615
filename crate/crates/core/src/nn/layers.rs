use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{Conv2d, Conv2dConfig, Embedding, Linear};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

struct BuilderState {
    rng: ChaCha8Rng,
    vars: BTreeMap<String, Var>,
}

/// Creates named parameters with seeded initialization.
///
/// Parameter values depend only on the seed and on the order in which the
/// model asks for them.
#[derive(Clone)]
pub struct ParamBuilder {
    state: Arc<Mutex<BuilderState>>,
    prefix: String,
    dtype: DType,
    device: Device,
}

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            state: Arc::new(Mutex::new(BuilderState {
                rng: ChaCha8Rng::seed_from_u64(seed),
                vars: BTreeMap::new(),
            })),
            prefix: String::new(),
            dtype,
            device: device.clone(),
        }
    }

    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Self {
            prefix,
            ..self.clone()
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let key = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let tensor = var.as_tensor().clone();
        let mut st = self.state.lock().expect("param builder poisoned");
        assert!(st.vars.insert(key.clone(), var).is_none(), "duplicate parameter {key}");
        Ok(tensor)
    }

    pub fn uniform(&self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = {
            let mut st = self.state.lock().expect("param builder poisoned");
            (0..n).map(|_| st.rng.random_range(-bound..bound)).collect()
        };
        self.register(name, values, shape)
    }

    pub fn constant(&self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        self.register(name, vec![value; shape.iter().product()], shape)
    }

    pub fn linear(&self, in_dim: usize, out_dim: usize, bias: bool) -> Result<Linear> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = self.uniform("weight", &[out_dim, in_dim], bound)?;
        let b = if bias {
            Some(self.constant("bias", &[out_dim], 0.0)?)
        } else {
            None
        };
        Ok(Linear::new(w, b))
    }

    pub fn conv2d(
        &self,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        cfg: Conv2dConfig,
        bias: bool,
    ) -> Result<Conv2d> {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let w = self.uniform("weight", &[out_ch, in_ch, kernel, kernel], bound)?;
        let b = if bias {
            Some(self.constant("bias", &[out_ch], 0.0)?)
        } else {
            None
        };
        Ok(Conv2d::new(w, b, cfg))
    }

    pub fn layer_norm(&self, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            weight: self.constant("weight", &[dim], 1.0)?,
            bias: self.constant("bias", &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn embedding(&self, vocab: usize, dim: usize) -> Result<Embedding> {
        let w = self.uniform("weight", &[vocab, dim], 0.5)?;
        Ok(Embedding::new(w, dim))
    }

    pub fn finish(self) -> ParamSet {
        let st = self.state.lock().expect("param builder poisoned");
        ParamSet {
            vars: st.vars.clone(),
        }
    }
}

/// All trainable parameters of a model, by dotted name.
#[derive(Clone, Default)]
pub struct ParamSet {
    vars: BTreeMap<String, Var>,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

/// Layer normalization over the last dimension, composed of differentiable
/// primitives.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub weight: Tensor,
    pub bias: Tensor,
    eps: f64,
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Softmax over the last dimension. The row max is detached; the shift
/// does not change the value, so the gradient is unaffected.
pub fn softmax_last(x: &Tensor) -> candle_core::Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    e.broadcast_div(&sum)
}

const MASK_NEG: f64 = -1e9;

/// Multi-head scaled dot-product attention with separate query and
/// key/value inputs.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(pb: &ParamBuilder, q_dim: usize, kv_dim: usize, dim: usize, heads: usize) -> Result<Self> {
        assert!(dim.is_multiple_of(heads), "dim {dim} not divisible by {heads} heads");
        Ok(Self {
            q: pb.pp("q").linear(q_dim, dim, true)?,
            k: pb.pp("k").linear(kv_dim, dim, true)?,
            v: pb.pp("v").linear(kv_dim, dim, true)?,
            o: pb.pp("o").linear(dim, dim, true)?,
            heads,
            head_dim: dim / heads,
        })
    }

    fn split(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, n, _) = x.dims3()?;
        x.reshape((b, n, self.heads, self.head_dim))?
            .transpose(1, 2)?
            .contiguous()
    }

    /// Attention weights `(B, heads, Nq, Nk)`. `key_mask` is `(B, Nk)` with
    /// 1 for attendable keys and 0 for padding.
    pub fn weights(&self, query: &Tensor, keys: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        let q = self.split(&self.q.forward(query)?)?;
        let k = self.split(&self.k.forward(keys)?)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (self.head_dim as f64).sqrt())?;
        let scores = match key_mask {
            Some(m) => {
                let (b, nk) = m.dims2()?;
                let bias = ((m - 1.0)? * -MASK_NEG)?.reshape((b, 1, 1, nk))?;
                scores.broadcast_add(&bias)?
            }
            None => scores,
        };
        Ok(softmax_last(&scores)?)
    }

    /// Attention readout before the output projection is applied.
    pub fn forward_with_weights(
        &self,
        query: &Tensor,
        keys: &Tensor,
        key_mask: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let w = self.weights(query, keys, key_mask)?;
        let v = self.split(&self.v.forward(keys)?)?;
        let (b, _, nq, _) = w.dims4()?;
        let out = w
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, nq, self.heads * self.head_dim))?;
        Ok((self.o.forward(&out)?, w))
    }

    pub fn forward(&self, query: &Tensor, keys: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.forward_with_weights(query, keys, key_mask)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(pb: &ParamBuilder, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: pb.pp("fc1").linear(dim, hidden, true)?,
            fc2: pb.pp("fc2").linear(hidden, dim, true)?,
        })
    }
}

impl Module for Mlp {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(pb: &ParamBuilder, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: pb.pp("ln1").layer_norm(dim)?,
            attn: MultiHeadAttention::new(&pb.pp("attn"), dim, dim, dim, heads)?,
            ln2: pb.pp("ln2").layer_norm(dim)?,
            mlp: Mlp::new(&pb.pp("mlp"), dim, dim * mlp_ratio)?,
        })
    }

    pub fn forward(&self, x: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, key_mask)?)?;
        let h = self.ln2.forward(&x)?;
        Ok((&x + self.mlp.forward(&h)?)?)
    }
}

/// Fixed 2-D sinusoidal position table of shape `(h·w, dim)`: the first
/// half of the channels encodes the row, the second half the column.
pub fn sinusoidal_2d(h: usize, w: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    assert!(dim.is_multiple_of(4), "positional dim {dim} must be a multiple of 4");
    let half = dim / 2;
    let mut out = Vec::with_capacity(h * w * dim);
    let enc = |pos: usize, buf: &mut Vec<f64>| {
        for i in 0..half / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / half as f64);
            let a = pos as f64 * freq;
            buf.push(a.sin());
            buf.push(a.cos());
        }
    };
    for r in 0..h {
        for c in 0..w {
            enc(r, &mut out);
            enc(c, &mut out);
        }
    }
    Ok(Tensor::from_vec(out, (h * w, dim), device)?.to_dtype(dtype)?)
}

/// Row-major `(out, in)` matrix of 1-D bilinear interpolation weights with
/// half-pixel centers (sample `o` reads source coordinate
/// `(o + 0.5)·in/out − 0.5`, clamped to the valid range).
pub fn bilinear_weights(out: usize, input: usize) -> Vec<f64> {
    let mut m = vec![0.0; out * input];
    let scale = input as f64 / out as f64;
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let frac = src - i0 as f64;
        m[o * input + i0] += 1.0 - frac;
        m[o * input + i1] += frac;
    }
    m
}

/// Bilinear resize of `(B, h, w)` maps to `(B, out_h, out_w)` as two matrix
/// products, which keeps the operation differentiable.
pub fn upsample_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, h, w) = x.dims3()?;
    let (dtype, dev) = (x.dtype(), x.device());
    let ry = Tensor::from_vec(bilinear_weights(out_h, h), (out_h, h), dev)?.to_dtype(dtype)?;
    let rx = Tensor::from_vec(bilinear_weights(out_w, w), (out_w, w), dev)?
        .to_dtype(dtype)?
        .t()?
        .contiguous()?;
    Ok(ry.broadcast_matmul(x)?.broadcast_matmul(&rx)?)
}

pub fn conv_cfg(padding: usize, stride: usize) -> Conv2dConfig {
    Conv2dConfig {
        padding,
        stride,
        ..Default::default()
    }
}

/// `(B, N, C)` tokens to a `(B, C, h, w)` grid.
pub fn tokens_to_grid(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, n, c) = x.dims3()?;
    debug_assert_eq!(n, h * w);
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?)
}

/// `(B, C, h, w)` grid to `(B, h·w, C)` tokens.
pub fn grid_to_tokens(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn bilinear_preserves_constants() {
        for (o, i) in [(64, 16), (32, 8), (7, 3), (5, 5)] {
            let m = bilinear_weights(o, i);
            for r in 0..o {
                let s: f64 = m[r * i..(r + 1) * i].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let x = Tensor::full(0.37f64, (2, 4, 4), &Device::Cpu).unwrap();
        let y = upsample_bilinear(&x, 16, 16).unwrap();
        for v in y.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_matches_direct_interpolation() {
        // Direct per-pixel formula as an independent reference.
        let x = randn(&[1, 3, 5], 1);
        let xv = x.to_vec3::<f64>().unwrap()[0].clone();
        let y = upsample_bilinear(&x, 6, 10).unwrap().to_vec3::<f64>().unwrap()[0].clone();
        let coord = |o: usize, out: usize, inp: usize| {
            let s = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(inp - 1);
            (i0, (i0 + 1).min(inp - 1), s - i0 as f64)
        };
        for (r, row) in y.iter().enumerate() {
            let (y0, y1, fy) = coord(r, 6, 3);
            for (c, &v) in row.iter().enumerate() {
                let (x0, x1, fx) = coord(c, 10, 5);
                let top = xv[y0][x0] * (1.0 - fx) + xv[y0][x1] * fx;
                let bot = xv[y1][x0] * (1.0 - fx) + xv[y1][x1] * fx;
                let want = top * (1.0 - fy) + bot * fy;
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_attention_rows_are_distributions() {
        let pb = ParamBuilder::new(3, DType::F64, &Device::Cpu);
        let attn = MultiHeadAttention::new(&pb, 8, 12, 8, 2).unwrap();
        let q = randn(&[2, 5, 8], 4);
        let kv = randn(&[2, 6, 12], 5);
        let mask = Tensor::from_vec(
            vec![1.0f64, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0],
            (2, 6),
            &Device::Cpu,
        )
        .unwrap();
        let w = attn
            .weights(&q, &kv, Some(&mask))
            .unwrap()
            .flatten_to(2)
            .unwrap()
            .to_vec2::<f64>()
            .unwrap();
        for (i, row) in w.iter().enumerate() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let pads: &[usize] = if i < 10 { &[3, 4, 5] } else { &[5] };
            for &p in pads {
                assert_eq!(row[p], 0.0);
            }
        }
    }

    #[test]
    fn layer_norm_normalizes() {
        let pb = ParamBuilder::new(0, DType::F64, &Device::Cpu);
        let ln = pb.layer_norm(16).unwrap();
        let y = ln.forward(&randn(&[3, 16], 9)).unwrap().to_vec2::<f64>().unwrap();
        for row in y {
            let m: f64 = row.iter().sum::<f64>() / 16.0;
            let v: f64 = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn builder_is_seeded() {
        let make = |seed| {
            let pb = ParamBuilder::new(seed, DType::F32, &Device::Cpu);
            pb.pp("a").linear(4, 4, true).unwrap();
            let ps = pb.finish();
            ps.get("a.weight").unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap()
        };
        assert_eq!(make(1), make(1));
        assert_ne!(make(1), make(2));
    }
}
