//! Pseudo-label generation: three routes that turn weakly labeled or
//! unlabeled images into caption–mask triplets, and score-based filtering.
//!
//! Every route is written against the stage traits below; [`oracle`]
//! provides implementations that read the shape-world exactly, optionally
//! with injected noise.

pub mod oracle;

use std::sync::Arc;

use image::RgbImage;

use crate::data::{render_prompt, validate_triplet, Mask, Source, Task, Triplet};
use crate::error::{Error, Result};
use crate::shapes::Color;

pub use oracle::{Noise, OracleStages};

/// Half-open box `[row0, col0, row1, col1)`.
pub type BBox = [usize; 4];

pub trait Tagger {
    fn id(&self) -> String;
    fn tags(&self, image: &RgbImage) -> Result<Vec<String>>;
}

pub trait Detector {
    fn id(&self) -> String;
    fn detect(&self, image: &RgbImage, tag: &str) -> Result<Vec<BBox>>;
}

pub trait MaskGenerator {
    fn id(&self) -> String;
    /// Mask of the object inside `bbox`, in `image` coordinates.
    fn segment(&self, image: &RgbImage, bbox: BBox) -> Result<Mask>;
}

pub trait Captioner {
    fn id(&self) -> String;
    /// `None` when there is nothing to describe.
    fn caption(&self, image: &RgbImage) -> Result<Option<String>>;
}

pub trait Grounder {
    fn id(&self) -> String;
    fn ground(&self, image: &RgbImage, caption: &str) -> Result<Mask>;
}

pub trait MatchScorer {
    fn id(&self) -> String;
    /// Agreement of `mask` and `caption` on `image`, in [0, 1].
    fn score(&self, image: &RgbImage, mask: &Mask, caption: &str) -> Result<f64>;
}

/// One implementation per stage.
pub struct StageSet {
    pub tagger: Box<dyn Tagger>,
    pub detector: Box<dyn Detector>,
    pub masker: Box<dyn MaskGenerator>,
    pub captioner: Box<dyn Captioner>,
    pub grounder: Box<dyn Grounder>,
    pub scorer: Box<dyn MatchScorer>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub route: &'static str,
    pub stages: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct PseudoBatch {
    pub triplets: Vec<Triplet>,
    /// Parallel to `triplets`.
    pub provenance: Vec<Provenance>,
    /// Why candidate triplets were discarded.
    pub dropped: Vec<String>,
}

impl PseudoBatch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn extend(&mut self, other: PseudoBatch) {
        self.triplets.extend(other.triplets);
        self.provenance.extend(other.provenance);
        self.dropped.extend(other.dropped);
    }

    fn push(&mut self, triplet: Triplet, provenance: Provenance) -> Result<()> {
        validate_triplet(&triplet)?;
        self.triplets.push(triplet);
        self.provenance.push(provenance);
        Ok(())
    }

    fn drop_with(&mut self, reason: String) {
        log::debug!("dropped candidate: {reason}");
        self.dropped.push(reason);
    }
}

fn pseudo(image: &Arc<RgbImage>, mask: Mask, caption: String, task: Task, source: Source, score: f64) -> Triplet {
    Triplet {
        image: Arc::clone(image),
        mask,
        caption,
        task,
        source,
        score: Some(score.clamp(0.0, 1.0)),
        frame: None,
    }
}

fn check_box(b: BBox, h: usize, w: usize) -> Result<()> {
    if b[2] <= b[0] || b[3] <= b[1] {
        return Err(Error::DegenerateBox(b));
    }
    if b[2] > h || b[3] > w {
        return Err(Error::InvalidArgument(format!("box {b:?} outside {h}x{w} image")));
    }
    Ok(())
}

/// Annotated boxes: each box is cropped, segmented and captioned; the crop
/// mask is pasted back into image coordinates.
pub fn run_box_route(image: &Arc<RgbImage>, boxes: &[BBox], stages: &StageSet) -> Result<PseudoBatch> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let provenance = Provenance {
        route: "box",
        stages: vec![stages.masker.id(), stages.captioner.id(), stages.scorer.id()],
    };
    let mut out = PseudoBatch::default();
    for &b in boxes {
        check_box(b, h, w)?;
        let (bh, bw) = (b[2] - b[0], b[3] - b[1]);
        let crop = image::imageops::crop_imm(image.as_ref(), b[1] as u32, b[0] as u32, bw as u32, bh as u32).to_image();
        let local = stages.masker.segment(&crop, [0, 0, bh, bw])?;
        let Some(caption) = stages.captioner.caption(&crop)? else {
            out.drop_with(format!("box {b:?}: no caption"));
            continue;
        };
        let mask = Mask::from_fn(h, w, |r, c| {
            r >= b[0] && r < b[2] && c >= b[1] && c < b[3] && local.get(r - b[0], c - b[1])
        });
        if mask.is_empty() || caption.trim().is_empty() {
            out.drop_with(format!("box {b:?}: empty mask or caption"));
            continue;
        }
        let score = stages.scorer.score(image, &mask, &caption)?;
        out.push(pseudo(image, mask, caption, Task::Ris, Source::PseudoBox, score), provenance.clone())?;
    }
    Ok(out)
}

/// Relabels an image from scratch: tags, boxes per tag, masks per box. Each
/// tag yields one category triplet `all {tag}` whose mask is the union of
/// its box masks.
pub fn run_mask_route(image: &Arc<RgbImage>, stages: &StageSet) -> Result<PseudoBatch> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let provenance = Provenance {
        route: "mask",
        stages: vec![
            stages.tagger.id(),
            stages.detector.id(),
            stages.masker.id(),
            stages.scorer.id(),
        ],
    };
    let mut out = PseudoBatch::default();
    for tag in stages.tagger.tags(image)? {
        let boxes = stages.detector.detect(image, &tag)?;
        if boxes.is_empty() {
            out.drop_with(format!("tag `{tag}`: no detections"));
            continue;
        }
        let mut mask = Mask::zeros(h, w);
        for b in boxes {
            check_box(b, h, w)?;
            mask = mask.union(&stages.masker.segment(image, b)?);
        }
        if mask.is_empty() {
            out.drop_with(format!("tag `{tag}`: empty mask"));
            continue;
        }
        let task = if tag.parse::<Color>().is_ok() { Task::Ovs } else { Task::Ss };
        let caption = render_prompt(task, Some(&tag))?;
        let score = stages.scorer.score(image, &mask, &caption)?;
        out.push(pseudo(image, mask, caption, task, Source::PseudoMask, score), provenance.clone())?;
    }
    Ok(out)
}

/// Captions an unlabeled image and grounds the caption to a mask.
pub fn run_unlabeled_route(image: &Arc<RgbImage>, stages: &StageSet) -> Result<PseudoBatch> {
    let provenance = Provenance {
        route: "unlabeled",
        stages: vec![stages.captioner.id(), stages.grounder.id(), stages.scorer.id()],
    };
    let mut out = PseudoBatch::default();
    let Some(caption) = stages.captioner.caption(image)? else {
        out.drop_with("no caption".into());
        return Ok(out);
    };
    let mask = stages.grounder.ground(image, &caption)?;
    if mask.is_empty() {
        log::warn!("grounder found nothing for `{caption}`; triplet dropped");
        out.drop_with(format!("`{caption}`: grounder returned an empty mask"));
        return Ok(out);
    }
    let score = stages.scorer.score(image, &mask, &caption)?;
    out.push(pseudo(image, mask, caption, Task::Ris, Source::PseudoUnlabeled, score), provenance)?;
    Ok(out)
}

/// Keeps the triplets whose match score is at least `threshold`, in order,
/// with the new score recorded.
pub fn filter_triplets(batch: &PseudoBatch, scorer: &dyn MatchScorer, threshold: f64) -> Result<PseudoBatch> {
    let mut out = PseudoBatch {
        dropped: batch.dropped.clone(),
        ..PseudoBatch::default()
    };
    for (i, t) in batch.triplets.iter().enumerate() {
        let s = scorer.score(&t.image, &t.mask, &t.caption)?.clamp(0.0, 1.0);
        if s >= threshold {
            let mut kept = t.clone();
            kept.score = Some(s);
            out.triplets.push(kept);
            if let Some(p) = batch.provenance.get(i) {
                out.provenance.push(p.clone());
            }
        } else {
            out.dropped.push(format!("`{}`: score {s:.3} below {threshold}", t.caption));
        }
    }
    Ok(out)
}
