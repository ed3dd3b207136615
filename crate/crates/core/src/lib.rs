//! Language-guided universal segmentation.
//!
//! Every task (referring, semantic, open-vocabulary, part, salient and video
//! segmentation) is posed as "image + caption → mask" over one triplet data
//! model. The crate contains that data model, a synthetic shape-world with
//! exact ground truth, the segmentation network, training, a
//! pseudo-annotation engine and evaluation metrics.

pub mod annotate;
pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod shapes;
pub mod train;

pub use error::{Error, Result};
