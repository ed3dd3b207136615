//! Word-level tokenizer and transformer text encoder.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Embedding, Linear};

use super::config::{ModelConfig, SentencePooling};
use super::layers::{LayerNorm, ParamBuilder, TransformerBlock};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Words of the shape-world caption grammar.
const SHAPE_WORLD_WORDS: &[&str] = &[
    "all", "the", "most", "salient", "object", "largest", "smallest", "shape", "left", "right",
    "of", "above", "below", "red", "green", "blue", "yellow", "circle", "square", "triangle",
    "border", "interior",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for w in words {
            if !all.contains(&w) {
                all.push(w);
            }
        }
        let index = all.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { words: all, index }
    }

    pub fn shape_world() -> Self {
        Self::from_words(SHAPE_WORLD_WORDS.iter().map(|s| s.to_string()))
    }

    /// One word per line; blank lines and special tokens are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_words(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !SPECIALS.contains(&l.as_str())),
        ))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }
}

/// Token ids of one caption with its padding mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokens {
    pub ids: Vec<u32>,
    /// 1 for real tokens (including BOS/EOS), 0 for padding.
    pub mask: Vec<u8>,
    pub eos_index: usize,
}

impl Tokens {
    pub fn real_len(&self) -> usize {
        self.eos_index + 1
    }
}

/// Lowercases, splits on anything that is not alphanumeric, maps unknown
/// words to UNK and wraps in BOS/EOS. Words beyond `max_len - 2` are
/// dropped; the rest is padded to `max_len`.
pub fn tokenize(caption: &str, vocab: &Vocab, max_len: usize) -> Result<Tokens> {
    let lower = caption.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(Error::EmptyCaption);
    }
    let keep = words.len().min(max_len.saturating_sub(2));
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(words[..keep].iter().map(|w| vocab.id(w)));
    ids.push(EOS);
    let eos_index = ids.len() - 1;
    let mut mask = vec![1u8; ids.len()];
    ids.resize(max_len, PAD);
    mask.resize(max_len, 0);
    Ok(Tokens {
        ids,
        mask,
        eos_index,
    })
}

/// A batch of tokenized captions as tensors.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    /// `(B, L)` u32
    pub ids: Tensor,
    /// `(B, L)` 1/0 in the model dtype
    pub mask: Tensor,
    /// `(B, L)` one-hot of the EOS position
    pub eos: Tensor,
}

impl TokenBatch {
    pub fn new(tokens: &[Tokens], dtype: DType, device: &Device) -> Result<Self> {
        let b = tokens.len();
        let l = tokens.first().map_or(0, |t| t.ids.len());
        if tokens.iter().any(|t| t.ids.len() != l) {
            return Err(Error::InvalidArgument("token sequences differ in length".into()));
        }
        let ids: Vec<u32> = tokens.iter().flat_map(|t| t.ids.iter().copied()).collect();
        let mask: Vec<f32> = tokens
            .iter()
            .flat_map(|t| t.mask.iter().map(|&m| m as f32))
            .collect();
        let eos: Vec<f32> = tokens
            .iter()
            .flat_map(|t| (0..l).map(move |i| (i == t.eos_index) as u8 as f32))
            .collect();
        Ok(Self {
            ids: Tensor::from_vec(ids, (b, l), device)?,
            mask: Tensor::from_vec(mask, (b, l), device)?.to_dtype(dtype)?,
            eos: Tensor::from_vec(eos, (b, l), device)?.to_dtype(dtype)?,
        })
    }
}

/// Per-token states `f_w` and pooled sentence embedding `f_s`.
#[derive(Debug, Clone)]
pub struct TextEncoding {
    /// `(B, L, C_t)`
    pub words: Tensor,
    /// `(B, 1, C_t)`
    pub sentence: Tensor,
    /// `(B, L)` padding mask
    pub mask: Tensor,
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    embed: Embedding,
    pos: Tensor,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    proj: Linear,
    pooling: SentencePooling,
}

impl TextEncoder {
    pub fn new(pb: &ParamBuilder, cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        let d = cfg.text_dim;
        Ok(Self {
            embed: pb.pp("embed").embedding(vocab_size, d)?,
            pos: pb.uniform("pos", &[cfg.max_len, d], 0.5)?,
            blocks: (0..cfg.text_layers)
                .map(|i| TransformerBlock::new(&pb.pp(format!("block{i}")), d, cfg.text_heads, cfg.mlp_ratio))
                .collect::<Result<_>>()?,
            norm: pb.pp("norm").layer_norm(d)?,
            proj: pb.pp("proj").linear(d, d, true)?,
            pooling: cfg.sentence_pooling,
        })
    }

    pub fn forward(&self, batch: &TokenBatch) -> Result<TextEncoding> {
        let (_, l) = batch.ids.dims2()?;
        let max_len = self.pos.dim(0)?;
        if l > max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence length {l} exceeds max_len {max_len}"
            )));
        }
        let mut x = self
            .embed
            .forward(&batch.ids)?
            .broadcast_add(&self.pos.narrow(0, 0, l)?)?;
        for block in &self.blocks {
            x = block.forward(&x, Some(&batch.mask))?;
        }
        let words = self.norm.forward(&x)?;
        let pooled = match self.pooling {
            SentencePooling::Eos => words
                .broadcast_mul(&batch.eos.unsqueeze(2)?)?
                .sum_keepdim(1)?,
            SentencePooling::Mean => {
                let m = batch.mask.unsqueeze(2)?;
                words
                    .broadcast_mul(&m)?
                    .sum_keepdim(1)?
                    .broadcast_div(&m.sum_keepdim(1)?)?
            }
        };
        Ok(TextEncoding {
            sentence: self.proj.forward(&pooled)?,
            words,
            mask: batch.mask.clone(),
        })
    }
}
