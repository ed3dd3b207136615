//! Network components and the assembled model.

pub mod config;
pub mod decoder;
pub mod layers;
pub mod model;
pub mod prefusion;
pub mod text;
pub mod vision;

pub use config::{ModelConfig, SentencePooling};
pub use layers::{ParamBuilder, ParamSet};
pub use model::{images_to_tensor, SegModel, SegOutput, BACKBONE_PREFIX, MASK_THRESHOLD};
pub use text::{tokenize, TokenBatch, Tokens, Vocab};
pub use vision::{FeatureMap, PyramidFeatures};
