//! Training schedules, optimizer, checkpoints and the training loop.

pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_model, model_config_hash, save_checkpoint, Checkpoint};
pub use config::{make_schedule, AdamParams, HideAndSeek, LrDecay, TrainConfig};
pub use optim::{backbone_groups, Adam, ParamGroup};
pub use trainer::{group_objects, stage_data, EpochStats, Trainer};
