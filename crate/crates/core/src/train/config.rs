//! Training configuration, stage schedules and the flat `key = value`
//! config format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{HIDE_PATCH, HIDE_PROB};
use crate::data::manifest::hex;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::{ModelConfig, SentencePooling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    /// Epochs with index `>= epoch` (0-based) run at the decayed rate.
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HideAndSeek {
    pub enabled: bool,
    pub patch: usize,
    pub prob: f64,
}

impl Default for HideAndSeek {
    fn default() -> Self {
        Self {
            enabled: true,
            patch: HIDE_PATCH,
            prob: HIDE_PROB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: u32,
    pub learning_rate: f64,
    pub epochs: usize,
    pub lr_decay: Option<LrDecay>,
    /// Multiplier on the learning rate of image-backbone parameters.
    pub backbone_lr_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub hide_and_seek: HideAndSeek,
    pub adam: AdamParams,
    /// Sweeps over the object list per epoch; lets small corpora reach a
    /// useful step count while keeping the epoch-based schedule.
    pub passes_per_epoch: usize,
    /// Pseudo-labeled objects per supervised object in stage 2.
    pub pseudo_ratio: f64,
    pub supervised_manifest: Option<PathBuf>,
    pub pseudo_manifest: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub model: ModelConfig,
}

/// Learning-rate settings of the two training stages.
pub fn make_schedule(stage: u32) -> Result<TrainConfig> {
    let base = TrainConfig {
        stage,
        learning_rate: 0.0,
        epochs: 0,
        lr_decay: None,
        backbone_lr_factor: 0.1,
        batch_size: 4,
        seed: 0,
        loss_weights: LossWeights::default(),
        hide_and_seek: HideAndSeek::default(),
        adam: AdamParams::default(),
        passes_per_epoch: 1,
        pseudo_ratio: 1.0,
        supervised_manifest: None,
        pseudo_manifest: None,
        init_checkpoint: None,
        checkpoint_out: None,
        model: ModelConfig::desk(),
    };
    match stage {
        1 => Ok(TrainConfig {
            learning_rate: 5e-5,
            epochs: 5,
            ..base
        }),
        2 => Ok(TrainConfig {
            learning_rate: 1e-4,
            epochs: 15,
            lr_decay: Some(LrDecay {
                epoch: 10,
                factor: 0.1,
            }),
            ..base
        }),
        s => Err(Error::UnknownStage(s)),
    }
}

impl TrainConfig {
    /// Head learning rate for the 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) if epoch >= d.epoch => self.learning_rate * d.factor,
            _ => self.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::UnknownStage(self.stage));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if let Some(d) = self.lr_decay {
            if !(d.factor > 0.0 && d.factor <= 1.0) {
                return bad(format!("lr decay factor {} outside (0, 1]", d.factor));
            }
        }
        if !(self.backbone_lr_factor > 0.0 && self.backbone_lr_factor <= 1.0) {
            return bad(format!("backbone_lr_factor {} outside (0, 1]", self.backbone_lr_factor));
        }
        if self.batch_size == 0 || self.passes_per_epoch == 0 {
            return bad("batch_size and passes_per_epoch must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.hide_and_seek.prob) || self.hide_and_seek.patch == 0 {
            return bad("hide-and-seek needs prob in [0, 1] and a positive patch".into());
        }
        if self.pseudo_ratio < 0.0 {
            return bad("pseudo_ratio must be non-negative".into());
        }
        self.model.validate()
    }

    /// SHA-256 of the canonical JSON of the full configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Parses a flat config. `stage` selects the schedule defaults; every
    /// other key overrides one field.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        Self::parse_with_stage(text, origin, None)
    }

    /// Like [`Self::parse`], with the stage given by the caller. A `stage`
    /// key in the text must then agree with it.
    pub fn parse_with_stage(text: &str, origin: &str, stage: Option<u32>) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = format!("{origin}:{}", n + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&loc, "expected `key = value`"))?;
            entries.push((loc, k.trim().to_string(), v.trim().to_string()));
        }
        let stage = match (entries.iter().find(|(_, k, _)| k == "stage"), stage) {
            (Some((loc, _, v)), given) => {
                let s = parse_num::<u32>(loc, v)?;
                if given.is_some_and(|g| g != s) {
                    return Err(Error::parse(loc, format!("file says stage {s}, caller asked for {}", given.unwrap_or(s))));
                }
                s
            }
            (None, given) => given.unwrap_or(2),
        };
        let mut cfg = make_schedule(stage)?;
        if let Some((loc, _, v)) = entries.iter().find(|(_, k, _)| k == "model.preset") {
            cfg.model = match v.as_str() {
                "desk" => ModelConfig::desk(),
                "tiny" => ModelConfig::tiny(),
                "large" => ModelConfig::large(),
                other => return Err(Error::parse(loc, format!("unknown model preset `{other}`"))),
            };
        }
        for (loc, k, v) in &entries {
            if k == "stage" || k == "model.preset" {
                continue;
            }
            cfg.set(loc, k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn set(&mut self, loc: &str, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "learning_rate" => self.learning_rate = parse_num(loc, v)?,
            "epochs" => self.epochs = parse_num(loc, v)?,
            "lr_decay" => match v {
                "none" => self.lr_decay = None,
                _ => return Err(Error::parse(loc, "lr_decay accepts only `none`; use lr_decay_epoch / lr_decay_factor")),
            },
            "lr_decay_epoch" => self.lr_decay.get_or_insert(LrDecay { epoch: 0, factor: 1.0 }).epoch = parse_num(loc, v)?,
            "lr_decay_factor" => self.lr_decay.get_or_insert(LrDecay { epoch: 0, factor: 1.0 }).factor = parse_num(loc, v)?,
            "backbone_lr_factor" => self.backbone_lr_factor = parse_num(loc, v)?,
            "batch_size" => self.batch_size = parse_num(loc, v)?,
            "seed" => self.seed = parse_num(loc, v)?,
            "bce_weight" => self.loss_weights.bce = parse_num(loc, v)?,
            "dice_weight" => self.loss_weights.dice = parse_num(loc, v)?,
            "hide_and_seek" => self.hide_and_seek.enabled = parse_num(loc, v)?,
            "hide_patch" => self.hide_and_seek.patch = parse_num(loc, v)?,
            "hide_prob" => self.hide_and_seek.prob = parse_num(loc, v)?,
            "adam_beta1" => self.adam.beta1 = parse_num(loc, v)?,
            "adam_beta2" => self.adam.beta2 = parse_num(loc, v)?,
            "adam_eps" => self.adam.eps = parse_num(loc, v)?,
            "passes_per_epoch" => self.passes_per_epoch = parse_num(loc, v)?,
            "pseudo_ratio" => self.pseudo_ratio = parse_num(loc, v)?,
            "supervised_manifest" => self.supervised_manifest = parse_path(v),
            "pseudo_manifest" => self.pseudo_manifest = parse_path(v),
            "init_checkpoint" => self.init_checkpoint = parse_path(v),
            "checkpoint_out" => self.checkpoint_out = parse_path(v),
            "model.image_size" => m.image_size = parse_num(loc, v)?,
            "model.patch_size" => m.patch_size = parse_num(loc, v)?,
            "model.vision_channels" => m.vision_channels = parse_four(loc, v)?,
            "model.vision_depths" => m.vision_depths = parse_four(loc, v)?,
            "model.vision_heads" => m.vision_heads = parse_four(loc, v)?,
            "model.mlp_ratio" => m.mlp_ratio = parse_num(loc, v)?,
            "model.text_dim" => m.text_dim = parse_num(loc, v)?,
            "model.text_layers" => m.text_layers = parse_num(loc, v)?,
            "model.text_heads" => m.text_heads = parse_num(loc, v)?,
            "model.max_len" => m.max_len = parse_num(loc, v)?,
            "model.joint_dim" => m.joint_dim = parse_num(loc, v)?,
            "model.fusion_heads" => m.fusion_heads = parse_num(loc, v)?,
            "model.decoder_depth" => m.decoder_depth = parse_num(loc, v)?,
            "model.decoder_heads" => m.decoder_heads = parse_num(loc, v)?,
            "model.detail_channels" => m.detail_channels = parse_num(loc, v)?,
            "model.sentence_pooling" => {
                m.sentence_pooling = match v {
                    "eos" => SentencePooling::Eos,
                    "mean" => SentencePooling::Mean,
                    _ => return Err(Error::parse(loc, format!("unknown pooling `{v}`"))),
                }
            }
            "model.learnable_temperature" => m.learnable_temperature = parse_num(loc, v)?,
            "model.vocab_path" => m.vocab_path = parse_path(v),
            _ => return Err(Error::parse(loc, format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Serializes to the flat format; `parse(to_flat())` reproduces `self`.
    pub fn to_flat(&self) -> String {
        let mut lines = vec![
            format!("stage = {}", self.stage),
            format!("learning_rate = {:?}", self.learning_rate),
            format!("epochs = {}", self.epochs),
        ];
        match self.lr_decay {
            Some(d) => {
                lines.push(format!("lr_decay_epoch = {}", d.epoch));
                lines.push(format!("lr_decay_factor = {:?}", d.factor));
            }
            None => lines.push("lr_decay = none".into()),
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let four = |a: &[usize; 4]| a.map(|x| x.to_string()).join(",");
        let m = &self.model;
        lines.extend([
            format!("backbone_lr_factor = {:?}", self.backbone_lr_factor),
            format!("batch_size = {}", self.batch_size),
            format!("seed = {}", self.seed),
            format!("bce_weight = {:?}", self.loss_weights.bce),
            format!("dice_weight = {:?}", self.loss_weights.dice),
            format!("hide_and_seek = {}", self.hide_and_seek.enabled),
            format!("hide_patch = {}", self.hide_and_seek.patch),
            format!("hide_prob = {:?}", self.hide_and_seek.prob),
            format!("adam_beta1 = {:?}", self.adam.beta1),
            format!("adam_beta2 = {:?}", self.adam.beta2),
            format!("adam_eps = {:?}", self.adam.eps),
            format!("passes_per_epoch = {}", self.passes_per_epoch),
            format!("pseudo_ratio = {:?}", self.pseudo_ratio),
            format!("supervised_manifest = {}", path(&self.supervised_manifest)),
            format!("pseudo_manifest = {}", path(&self.pseudo_manifest)),
            format!("init_checkpoint = {}", path(&self.init_checkpoint)),
            format!("checkpoint_out = {}", path(&self.checkpoint_out)),
            format!("model.image_size = {}", m.image_size),
            format!("model.patch_size = {}", m.patch_size),
            format!("model.vision_channels = {}", four(&m.vision_channels)),
            format!("model.vision_depths = {}", four(&m.vision_depths)),
            format!("model.vision_heads = {}", four(&m.vision_heads)),
            format!("model.mlp_ratio = {}", m.mlp_ratio),
            format!("model.text_dim = {}", m.text_dim),
            format!("model.text_layers = {}", m.text_layers),
            format!("model.text_heads = {}", m.text_heads),
            format!("model.max_len = {}", m.max_len),
            format!("model.joint_dim = {}", m.joint_dim),
            format!("model.fusion_heads = {}", m.fusion_heads),
            format!("model.decoder_depth = {}", m.decoder_depth),
            format!("model.decoder_heads = {}", m.decoder_heads),
            format!("model.detail_channels = {}", m.detail_channels),
            format!(
                "model.sentence_pooling = {}",
                match m.sentence_pooling {
                    SentencePooling::Eos => "eos",
                    SentencePooling::Mean => "mean",
                }
            ),
            format!("model.learnable_temperature = {}", m.learnable_temperature),
            format!("model.vocab_path = {}", path(&m.vocab_path)),
        ]);
        lines.join("\n") + "\n"
    }
}

fn parse_num<T: std::str::FromStr>(loc: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::parse(loc, format!("bad value `{v}`: {e}")))
}

fn parse_path(v: &str) -> Option<PathBuf> {
    match v {
        "" | "none" => None,
        p => Some(PathBuf::from(p)),
    }
}

fn parse_four(loc: &str, v: &str) -> Result<[usize; 4]> {
    let parts = v
        .split(',')
        .map(|p| parse_num::<usize>(loc, p.trim()))
        .collect::<Result<Vec<_>>>()?;
    parts
        .try_into()
        .map_err(|_| Error::parse(loc, "expected four comma-separated values"))
}
