//! Binary cross-entropy and Dice losses.
//!
//! The slice functions evaluate the definitions directly in f64; the tensor
//! functions are the differentiable versions used in training.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp for the cross-entropy term.
pub const BCE_EPS: f64 = 1e-7;
/// Additive smoothing in the Dice coefficient.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub bce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { bce: 1.0, dice: 1.0 }
    }
}

/// Scalar loss with its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub bce: f64,
    pub dice: f64,
}

impl LossValue {
    pub fn new(bce: f64, dice: f64, w: LossWeights) -> Self {
        Self {
            total: w.bce * bce + w.dice * dice,
            bce,
            dice,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.bce.is_finite() && self.dice.is_finite()
    }
}

fn check_len(prob: &[f64], target: &[f64]) -> Result<()> {
    if prob.len() != target.len() {
        return Err(Error::ShapeMismatch {
            expected: (target.len(), 1),
            actual: (prob.len(), 1),
        });
    }
    Ok(())
}

/// Mean of `−[t·log p + (1−t)·log(1−p)]` with `p` clamped to `[ε, 1−ε]`.
pub fn bce_loss(prob: &[f64], target: &[f64]) -> Result<f64> {
    check_len(prob, target)?;
    if prob.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = prob
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / prob.len() as f64)
}

/// `1 − (2·Σpt + s) / (Σp + Σt + s)`.
pub fn dice_loss(prob: &[f64], target: &[f64]) -> Result<f64> {
    check_len(prob, target)?;
    let inter: f64 = prob.iter().zip(target).map(|(p, t)| p * t).sum();
    let sp: f64 = prob.iter().sum();
    let st: f64 = target.iter().sum();
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (sp + st + DICE_SMOOTH))
}

fn check_dims(logits: &Tensor, target: &Tensor) -> Result<()> {
    if logits.dims() != target.dims() {
        let flat = |t: &Tensor| (t.dim(0).unwrap_or(0), t.elem_count());
        return Err(Error::ShapeMismatch {
            expected: flat(target),
            actual: flat(logits),
        });
    }
    Ok(())
}

/// Cross-entropy on `(B, H, W)` logits, identical to [`bce_loss`] on
/// `sigmoid(logits)`. Clamping the probability to `[ε, 1−ε]` is the same as
/// clamping the logit to `±ln((1−ε)/ε)`, and the softplus form
/// `softplus(x) − t·x` stays accurate in f32.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_dims(logits, target)?;
    let bound = ((1.0 - BCE_EPS) / BCE_EPS).ln();
    let x = logits.clamp(-bound, bound)?;
    let softplus = (x.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?)?;
    Ok((softplus - (x * target)?)?.mean_all()?)
}

/// Dice loss per sample on `(B, H, W)` probabilities, averaged over the
/// batch.
pub fn dice_with_probs(prob: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_dims(prob, target)?;
    let b = prob.dim(0)?;
    let p = prob.flatten_from(1)?;
    let t = target.flatten_from(1)?;
    let inter = (&p * &t)?.sum(1)?;
    let num = ((inter * 2.0)? + DICE_SMOOTH)?;
    let den = ((p.sum(1)? + t.sum(1)?)? + DICE_SMOOTH)?;
    let coeff = (num / den)?;
    Ok(((coeff.neg()? + 1.0)?.sum_all()? / b as f64)?)
}

/// Weighted total and components for a batch of logits and binary targets.
pub fn segmentation_loss(logits: &Tensor, target: &Tensor, w: LossWeights) -> Result<(Tensor, LossValue)> {
    let bce = bce_with_logits(logits, target)?;
    let dice = dice_with_probs(&candle_nn::ops::sigmoid(logits)?, target)?;
    let total = ((&bce * w.bce)? + (&dice * w.dice)?)?;
    let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?) };
    let value = LossValue {
        total: scalar(&total)?,
        bce: scalar(&bce)?,
        dice: scalar(&dice)?,
    };
    Ok((total, value))
}
