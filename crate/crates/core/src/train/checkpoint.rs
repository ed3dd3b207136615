//! Single-file checkpoints: parameters, optimizer moments and metadata in
//! one safetensors file.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::optim::Adam;
use crate::data::manifest::hex;
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, SegModel};

const FORMAT: &str = "langseg-checkpoint";
const PARAM: &str = "param/";
const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";

/// SHA-256 of the canonical JSON of a model configuration.
pub fn model_config_hash(cfg: &ModelConfig) -> String {
    let json = serde_json::to_string(cfg).expect("model config serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F64 => "f64",
        _ => "f32",
    }
}

/// Writes the model parameters (and optimizer state when given).
pub fn save_checkpoint(
    path: &Path,
    model: &SegModel,
    optimizer: Option<&Adam>,
    train: Option<&TrainConfig>,
    epoch: usize,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|(n, v)| (format!("{PARAM}{n}"), v.as_tensor().clone()))
        .collect();
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT.to_string());
    meta.insert("config_hash".to_string(), model_config_hash(model.config()));
    meta.insert(
        "model_config".to_string(),
        serde_json::to_string(model.config()).expect("model config serializes"),
    );
    meta.insert("dtype".to_string(), dtype_name(model.dtype()).to_string());
    meta.insert("epoch".to_string(), epoch.to_string());
    if let Some(t) = train {
        meta.insert("train_config".to_string(), serde_json::to_string(t).expect("train config serializes"));
        meta.insert("train_config_hash".to_string(), t.hash());
    }
    if let Some(opt) = optimizer {
        meta.insert("adam_step".to_string(), opt.step.to_string());
        for (n, m) in &opt.m {
            tensors.push((format!("{MOMENT1}{n}"), m.clone()));
        }
        for (n, v) in &opt.v {
            tensors.push((format!("{MOMENT2}{n}"), v.clone()));
        }
    }
    tensors.sort_by(|a, b| a.0.cmp(&b.0));
    let bytes = safetensors::serialize(tensors.iter().map(|(n, t)| (n.as_str(), t)), Some(meta))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Contents of a checkpoint file.
#[derive(Debug)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub config_hash: String,
    pub dtype: DType,
    pub epoch: usize,
    pub train_config: Option<TrainConfig>,
    pub params: HashMap<String, Tensor>,
    pub adam_step: Option<u64>,
    pub moments: (HashMap<String, Tensor>, HashMap<String, Tensor>),
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing `{k}` metadata")));
        if get("format")? != FORMAT {
            return Err(bad("not a checkpoint".into()));
        }
        let model_config: ModelConfig =
            serde_json::from_str(get("model_config")?).map_err(|e| bad(e.to_string()))?;
        let config_hash = get("config_hash")?.clone();
        if model_config_hash(&model_config) != config_hash {
            return Err(bad("config hash does not match the stored model config".into()));
        }
        let dtype = match get("dtype")?.as_str() {
            "f64" => DType::F64,
            _ => DType::F32,
        };
        let epoch = get("epoch")?.parse().map_err(|_| bad("bad epoch".into()))?;
        let train_config = match meta.get("train_config") {
            Some(s) => Some(serde_json::from_str(s).map_err(|e| bad(e.to_string()))?),
            None => None,
        };
        let adam_step = match meta.get("adam_step") {
            Some(s) => Some(s.parse().map_err(|_| bad("bad adam_step".into()))?),
            None => None,
        };
        let all = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
        let (mut params, mut m, mut v) = (HashMap::new(), HashMap::new(), HashMap::new());
        for (name, t) in all {
            if let Some(n) = name.strip_prefix(PARAM) {
                params.insert(n.to_string(), t);
            } else if let Some(n) = name.strip_prefix(MOMENT1) {
                m.insert(n.to_string(), t);
            } else if let Some(n) = name.strip_prefix(MOMENT2) {
                v.insert(n.to_string(), t);
            } else {
                return Err(bad(format!("unexpected tensor `{name}`")));
            }
        }
        Ok(Self {
            model_config,
            config_hash,
            dtype,
            epoch,
            train_config,
            params,
            adam_step,
            moments: (m, v),
        })
    }

    /// Copies the stored parameters into `model`, which must have the same
    /// configuration.
    pub fn apply_to(&self, model: &SegModel) -> Result<()> {
        if model_config_hash(model.config()) != self.config_hash {
            return Err(Error::Checkpoint("model config differs from checkpoint".into()));
        }
        if model.params().len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for (name, var) in model.params().iter() {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.dims() != var.as_tensor().dims() {
                return Err(Error::Checkpoint(format!("shape mismatch for `{name}`")));
            }
            var.set(&t.to_dtype(var.dtype())?.to_device(var.device())?)?;
        }
        Ok(())
    }

    /// Builds a model from the stored configuration and parameters.
    pub fn into_model(&self, device: &Device) -> Result<SegModel> {
        let model = SegModel::new(&self.model_config, 0, self.dtype, device)?;
        self.apply_to(&model)?;
        Ok(model)
    }

    /// Restores optimizer moments and step count.
    pub fn restore_optimizer(&self, opt: &mut Adam, device: &Device) -> Result<()> {
        opt.step = self.adam_step.unwrap_or(0);
        opt.m.clear();
        opt.v.clear();
        for (n, t) in &self.moments.0 {
            opt.m.insert(n.clone(), t.to_device(device)?);
        }
        for (n, t) in &self.moments.1 {
            opt.v.insert(n.clone(), t.to_device(device)?);
        }
        Ok(())
    }
}

pub fn load_model(path: &Path, device: &Device) -> Result<SegModel> {
    Checkpoint::read(path)?.into_model(device)
}
