//! Unified triplet data model shared by every task.
//!
//! Each training or evaluation record is an image, a binary mask and a
//! caption, tagged with the task it came from and its provenance.

pub(crate) mod manifest;
mod mask;
mod prompt;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;

pub use manifest::{corpus_digest, load_manifest, write_manifest, MANIFEST_FORMAT};
pub use mask::{Mask, ProbMap};
pub use prompt::{render_prompt, PromptTemplate, SALIENT_PROMPT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// Referring image segmentation.
    Ris,
    /// Referring video object segmentation.
    Rvos,
    /// Semantic segmentation.
    Ss,
    /// Open-vocabulary segmentation.
    Ovs,
    /// Part segmentation.
    Ps,
    /// Salient object detection.
    Sod,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Ris, Task::Rvos, Task::Ss, Task::Ovs, Task::Ps, Task::Sod];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ris => "RIS",
            Task::Rvos => "RVOS",
            Task::Ss => "SS",
            Task::Ovs => "OVS",
            Task::Ps => "PS",
            Task::Sod => "SOD",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// Where a triplet's mask and caption came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Supervised,
    PseudoBox,
    PseudoMask,
    PseudoUnlabeled,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Supervised => "supervised",
            Source::PseudoBox => "pseudo_box",
            Source::PseudoMask => "pseudo_mask",
            Source::PseudoUnlabeled => "pseudo_unlabeled",
        }
    }

    pub fn is_pseudo(self) -> bool {
        !matches!(self, Source::Supervised)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Source::Supervised,
            Source::PseudoBox,
            Source::PseudoMask,
            Source::PseudoUnlabeled,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| Error::UnknownSource(s.to_string()))
    }
}

/// Location of a frame inside a video; videos are processed frame by frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrameRef {
    pub video_id: String,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub image: Arc<RgbImage>,
    pub mask: Mask,
    pub caption: String,
    pub task: Task,
    pub source: Source,
    /// Caption/mask match score; present exactly for pseudo-labeled data.
    pub score: Option<f64>,
    pub frame: Option<FrameRef>,
}

impl Triplet {
    pub fn supervised(image: Arc<RgbImage>, mask: Mask, caption: String, task: Task) -> Self {
        Self {
            image,
            mask,
            caption,
            task,
            source: Source::Supervised,
            score: None,
            frame: None,
        }
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.image.height() as usize, self.image.width() as usize)
    }
}

/// Checks every triplet invariant.
pub fn validate_triplet(t: &Triplet) -> Result<()> {
    let dims = t.image_dims();
    if t.mask.dims() != dims {
        return Err(Error::ShapeMismatch {
            expected: dims,
            actual: t.mask.dims(),
        });
    }
    if t.caption.trim().is_empty() {
        return Err(Error::EmptyCaption);
    }
    if let Some(v) = t.mask.first_nonbinary() {
        return Err(Error::NonBinaryMask(v as f32));
    }
    if t.source.is_pseudo() != t.score.is_some() {
        return Err(Error::ScorePresence {
            source_kind: t.source.as_str(),
            score: t.score,
        });
    }
    if let Some(s) = t.score {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::ScoreRange(s));
        }
    }
    Ok(())
}
