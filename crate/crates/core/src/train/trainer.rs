use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::optim::{backbone_groups, Adam};
use crate::augment::{channel_mean, hide_and_seek};
use crate::data::Triplet;
use crate::error::{Error, Result};
use crate::losses::{segmentation_loss, LossValue};
use crate::nn::{SegModel, BACKBONE_PREFIX};

/// Groups triplets that describe the same object (same image pixels and
/// mask) so each object contributes one caption per visit.
pub fn group_objects(triplets: &[Triplet]) -> Vec<Vec<usize>> {
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, t) in triplets.iter().enumerate() {
        let mut h = DefaultHasher::new();
        t.image.as_raw().hash(&mut h);
        t.mask.as_slice().hash(&mut h);
        t.image.dimensions().hash(&mut h);
        let g = *index.entry(h.finish()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// Training data for a stage: pseudo-labeled only for stage 1; for stage 2
/// all supervised triplets plus pseudo-labeled objects up to
/// `pseudo_ratio` per supervised object.
pub fn stage_data(cfg: &TrainConfig, supervised: Vec<Triplet>, pseudo: Vec<Triplet>) -> Vec<Triplet> {
    if cfg.stage == 1 {
        return pseudo;
    }
    let n_sup = group_objects(&supervised).len();
    let budget = (cfg.pseudo_ratio * n_sup as f64).round() as usize;
    let mut groups = group_objects(&pseudo);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    groups.shuffle(&mut rng);
    groups.truncate(budget);
    groups.sort();
    let mut out = supervised;
    out.extend(groups.into_iter().flatten().map(|i| pseudo[i].clone()));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean: LossValue,
}

pub struct Trainer {
    pub model: SegModel,
    pub optimizer: Adam,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
    fill: [u8; 3],
    /// Completed optimizer steps.
    pub step: usize,
    /// Completed epochs.
    pub epoch: usize,
    /// Loss of every step, before its update.
    pub curve: Vec<LossValue>,
}

impl Trainer {
    pub fn new(model: SegModel, config: TrainConfig) -> Self {
        let groups = backbone_groups(model.params(), BACKBONE_PREFIX, config.backbone_lr_factor);
        Self {
            optimizer: Adam::new(config.adam, groups),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            config,
            fill: [0; 3],
            step: 0,
            epoch: 0,
            curve: Vec::new(),
        }
    }

    /// Fill color for hidden patches, normally the dataset channel mean.
    pub fn set_fill(&mut self, fill: [u8; 3]) {
        self.fill = fill;
    }

    /// One forward/backward/update on `batch` at head learning rate `lr`.
    /// Returns the loss before the update.
    pub fn train_step(&mut self, batch: &[&Triplet], lr: f64) -> Result<LossValue> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let hs = self.config.hide_and_seek;
        let mut images = Vec::with_capacity(batch.len());
        for t in batch {
            if hs.enabled && t.source.is_pseudo() {
                images.push(hide_and_seek(&t.image, hs.patch, hs.prob, self.fill, &mut self.rng)?.image);
            } else {
                images.push((*t.image).clone());
            }
        }
        let refs: Vec<&image::RgbImage> = images.iter().collect();
        let x = self.model.image_batch(&refs)?;
        let captions: Vec<&str> = batch.iter().map(|t| t.caption.as_str()).collect();
        let tokens = self.model.token_batch(&captions)?;
        let (h, w) = batch[0].mask.dims();
        let target: Vec<f32> = batch.iter().flat_map(|t| t.mask.to_f32()).collect();
        let target = Tensor::from_vec(target, (batch.len(), h, w), self.model.device())?.to_dtype(self.model.dtype())?;

        let out = self.model.forward(&x, &tokens)?;
        let (loss, value) = segmentation_loss(&out.logits, &target, self.config.loss_weights)?;
        if !value.is_finite() {
            log::error!(
                "non-finite loss at step {}: bce={} dice={} captions={:?}",
                self.step,
                value.bce,
                value.dice,
                captions
            );
            return Err(Error::NonFiniteLoss {
                step: self.step,
                bce: value.bce,
                dice: value.dice,
            });
        }
        let grads = loss.backward()?;
        self.optimizer.step(self.model.params(), &grads, lr)?;
        self.step += 1;
        self.curve.push(value);
        Ok(value)
    }

    /// Runs the configured number of epochs over `data`.
    pub fn fit(&mut self, data: &[Triplet]) -> Result<Vec<EpochStats>> {
        self.fit_with(data, |_| {})
    }

    pub fn fit_with(&mut self, data: &[Triplet], mut on_epoch: impl FnMut(&EpochStats)) -> Result<Vec<EpochStats>> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training data".into()));
        }
        self.fill = channel_mean(data.iter().map(|t| t.image.as_ref()));
        let objects = group_objects(data);
        let mut stats = Vec::new();
        while self.epoch < self.config.epochs {
            let lr = self.config.lr_at(self.epoch);
            let first = self.curve.len();
            for _ in 0..self.config.passes_per_epoch {
                let mut order: Vec<usize> = (0..objects.len()).collect();
                order.shuffle(&mut self.rng);
                for chunk in order.chunks(self.config.batch_size) {
                    let batch: Vec<&Triplet> = chunk
                        .iter()
                        .map(|&o| {
                            let g = &objects[o];
                            &data[g[self.rng.random_range(0..g.len())]]
                        })
                        .collect();
                    self.train_step(&batch, lr)?;
                }
            }
            let steps = self.curve.len() - first;
            let n = steps.max(1) as f64;
            let sum = |f: fn(&LossValue) -> f64| self.curve[first..].iter().map(f).sum::<f64>() / n;
            let epoch_stats = EpochStats {
                epoch: self.epoch,
                lr,
                steps,
                mean: LossValue {
                    total: sum(|v| v.total),
                    bce: sum(|v| v.bce),
                    dice: sum(|v| v.dice),
                },
            };
            log::info!(
                "epoch {} lr {:.2e} steps {} loss {:.4} (bce {:.4}, dice {:.4})",
                epoch_stats.epoch,
                lr,
                steps,
                epoch_stats.mean.total,
                epoch_stats.mean.bce,
                epoch_stats.mean.dice
            );
            on_epoch(&epoch_stats);
            stats.push(epoch_stats);
            self.epoch += 1;
        }
        Ok(stats)
    }
}
