//! Segmentation metrics: IoU family, adaptive F-measure, and J&F.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Mask, ProbMap};
use crate::error::{Error, Result};

/// β² of the F-measure for salient object detection.
pub const F_BETA_SQ: f64 = 0.3;

fn same_dims(pred: &Mask, target: &Mask) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch {
            expected: target.dims(),
            actual: pred.dims(),
        });
    }
    Ok(())
}

/// `|pred ∩ target| / |pred ∪ target|`, 1 when both are empty.
pub fn iou(pred: &Mask, target: &Mask) -> Result<f64> {
    same_dims(pred, target)?;
    let u = pred.union_count(target);
    if u == 0 {
        return Ok(1.0);
    }
    Ok(pred.intersection_count(target) as f64 / u as f64)
}

/// Dataset-level IoU: summed intersections over summed unions.
pub fn oiou(pairs: &[(&Mask, &Mask)]) -> Result<f64> {
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, t) in pairs {
        same_dims(p, t)?;
        inter += p.intersection_count(t);
        union += p.union_count(t);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean over classes of the per-class [`oiou`].
pub fn miou(items: &[(&str, &Mask, &Mask)]) -> Result<f64> {
    let mut groups: BTreeMap<&str, Vec<(&Mask, &Mask)>> = BTreeMap::new();
    for (class, p, t) in items {
        groups.entry(class).or_default().push((p, t));
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("mIoU over an empty set".into()));
    }
    let mut sum = 0.0;
    for pairs in groups.values() {
        sum += oiou(pairs)?;
    }
    Ok(sum / groups.len() as f64)
}

/// F-measure from precision and recall; 0 when either is undefined or both
/// are zero.
fn f_from_counts(tp: usize, predicted: usize, actual: usize, beta_sq: f64) -> f64 {
    if predicted == 0 || actual == 0 {
        return 0.0;
    }
    let p = tp as f64 / predicted as f64;
    let r = tp as f64 / actual as f64;
    let den = beta_sq * p + r;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + beta_sq) * p * r / den
}

/// Adaptive threshold `min(2·mean(prob), 1)`.
pub fn adaptive_threshold(prob: &ProbMap) -> f64 {
    if prob.data.is_empty() {
        return 1.0;
    }
    let mean = prob.data.iter().map(|&p| p as f64).sum::<f64>() / prob.data.len() as f64;
    (2.0 * mean).min(1.0)
}

/// Adaptive-threshold F-measure (`prob ≥ threshold` is foreground).
pub fn f_measure(prob: &ProbMap, target: &Mask) -> Result<f64> {
    if (prob.height, prob.width) != target.dims() {
        return Err(Error::ShapeMismatch {
            expected: target.dims(),
            actual: (prob.height, prob.width),
        });
    }
    let thr = adaptive_threshold(prob);
    let (mut tp, mut predicted) = (0, 0);
    for (&p, &t) in prob.data.iter().zip(target.as_slice()) {
        if p as f64 >= thr {
            predicted += 1;
            if t != 0 {
                tp += 1;
            }
        }
    }
    Ok(f_from_counts(tp, predicted, target.count(), F_BETA_SQ))
}

/// Foreground pixels with at least one 8-neighbour in the background
/// (pixels outside the grid count as background).
pub fn boundary(mask: &Mask) -> Mask {
    let inner = mask.morph(1, false);
    Mask::from_fn(mask.height(), mask.width(), |r, c| mask.get(r, c) && !inner.get(r, c))
}

/// Boundary F-measure with a one-pixel (8-neighbourhood) match tolerance.
/// Two empty boundaries score 1; one empty boundary scores 0.
pub fn boundary_f(pred: &Mask, target: &Mask) -> Result<f64> {
    same_dims(pred, target)?;
    let (bp, bt) = (boundary(pred), boundary(target));
    let (np, nt) = (bp.count(), bt.count());
    if np == 0 && nt == 0 {
        return Ok(1.0);
    }
    if np == 0 || nt == 0 {
        return Ok(0.0);
    }
    let (near_t, near_p) = (bt.morph(1, true), bp.morph(1, true));
    let matched_p = bp.intersection_count(&near_t);
    let matched_t = bt.intersection_count(&near_p);
    let precision = matched_p as f64 / np as f64;
    let recall = matched_t as f64 / nt as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JandF {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

/// Region similarity J (mean IoU), contour accuracy F (mean boundary F)
/// and their average over a sequence of frames.
pub fn j_and_f(preds: &[Mask], targets: &[Mask]) -> Result<JandF> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            expected: (targets.len(), 1),
            actual: (preds.len(), 1),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("J&F over an empty sequence".into()));
    }
    let (mut j, mut f) = (0.0, 0.0);
    for (p, t) in preds.iter().zip(targets) {
        j += iou(p, t)?;
        f += boundary_f(p, t)?;
    }
    let n = preds.len() as f64;
    let (j, f) = (j / n, f / n);
    Ok(JandF { j, f, jf: (j + f) / 2.0 })
}

/// Evaluation results for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub samples: usize,
    /// IoU of every prediction, in manifest order.
    pub per_sample_iou: Vec<f64>,
    /// Aggregates in [0, 1], keyed by name (`oiou`, `miou`, `f_mean`, `j`, `f`, `jf`).
    pub metrics: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn mean_iou(&self) -> f64 {
        if self.per_sample_iou.is_empty() {
            return 0.0;
        }
        self.per_sample_iou.iter().sum::<f64>() / self.per_sample_iou.len() as f64
    }

    /// `key = value` lines; values are ×100 for display.
    pub fn to_kv_text(&self) -> String {
        let mut out = format!("task = {}\nsamples = {}\n", self.task, self.samples);
        out.push_str(&format!("mean_iou = {:.4}\n", 100.0 * self.mean_iou()));
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k} = {:.4}\n", 100.0 * v));
        }
        out
    }
}
