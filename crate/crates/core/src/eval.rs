//! Task-dispatched evaluation.

use std::collections::BTreeMap;

use image::RgbImage;

use crate::data::{Mask, ProbMap, Task, Triplet};
use crate::error::{Error, Result};
use crate::metrics::{f_measure, iou, j_and_f, miou, oiou, MetricReport};
use crate::nn::{SegModel, MASK_THRESHOLD};

/// Anything that maps an image and caption to a probability map.
pub trait Segmenter {
    fn segment(&self, image: &RgbImage, caption: &str) -> Result<ProbMap>;
}

impl Segmenter for SegModel {
    fn segment(&self, image: &RgbImage, caption: &str) -> Result<ProbMap> {
        self.predict_prob(image, caption)
    }
}

/// Scores `segmenter` on `triplets`, all of which must carry `task`:
/// oIoU for RIS/OVS, mIoU over captions for SS/PS, mean adaptive F for SOD,
/// J&F averaged over videos for RVOS.
pub fn evaluate(segmenter: &dyn Segmenter, triplets: &[Triplet], task: Task) -> Result<MetricReport> {
    for (index, t) in triplets.iter().enumerate() {
        if t.task != task {
            return Err(Error::TaskMismatch {
                index,
                expected: task.as_str(),
                found: t.task.as_str(),
            });
        }
    }
    if triplets.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let probs = triplets
        .iter()
        .map(|t| segmenter.segment(&t.image, &t.caption))
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<Mask> = probs.iter().map(|p| p.binarize(MASK_THRESHOLD)).collect();
    let per_sample_iou = preds
        .iter()
        .zip(triplets)
        .map(|(p, t)| iou(p, &t.mask))
        .collect::<Result<Vec<_>>>()?;
    let mut metrics = BTreeMap::new();
    match task {
        Task::Ris | Task::Ovs => {
            let pairs: Vec<(&Mask, &Mask)> = preds.iter().zip(triplets).map(|(p, t)| (p, &t.mask)).collect();
            metrics.insert("oiou".to_string(), oiou(&pairs)?);
        }
        Task::Ss | Task::Ps => {
            let items: Vec<(&str, &Mask, &Mask)> = preds
                .iter()
                .zip(triplets)
                .map(|(p, t)| (t.caption.as_str(), p, &t.mask))
                .collect();
            metrics.insert("miou".to_string(), miou(&items)?);
        }
        Task::Sod => {
            let mut sum = 0.0;
            for (p, t) in probs.iter().zip(triplets) {
                sum += f_measure(p, &t.mask)?;
            }
            metrics.insert("f_mean".to_string(), sum / triplets.len() as f64);
        }
        Task::Rvos => {
            let mut videos: BTreeMap<(&str, &str), Vec<(usize, usize)>> = BTreeMap::new();
            for (i, t) in triplets.iter().enumerate() {
                let frame = t.frame.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("RVOS triplet {i} has no video frame reference"))
                })?;
                videos
                    .entry((frame.video_id.as_str(), t.caption.as_str()))
                    .or_default()
                    .push((frame.frame_index, i));
            }
            let (mut j, mut f) = (0.0, 0.0);
            for frames in videos.values_mut() {
                frames.sort();
                let p: Vec<Mask> = frames.iter().map(|&(_, i)| preds[i].clone()).collect();
                let t: Vec<Mask> = frames.iter().map(|&(_, i)| triplets[i].mask.clone()).collect();
                let r = j_and_f(&p, &t)?;
                j += r.j;
                f += r.f;
            }
            let n = videos.len() as f64;
            metrics.insert("j".to_string(), j / n);
            metrics.insert("f".to_string(), f / n);
            metrics.insert("jf".to_string(), (j / n + f / n) / 2.0);
        }
    }
    Ok(MetricReport {
        task: task.as_str().to_string(),
        samples: triplets.len(),
        per_sample_iou,
        metrics,
    })
}
