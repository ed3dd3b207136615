//! Stage implementations that read shape-world images exactly.
//!
//! Noise, when enabled, is a deterministic function of the seed and the
//! stage input, so reruns and reorderings give identical output.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BBox, Captioner, Detector, Grounder, MaskGenerator, MatchScorer, StageSet, Tagger};
use crate::data::Mask;
use crate::error::Result;
use crate::metrics::iou;
use crate::shapes::{parse_instances, rasterize_instances, Color, Extreme, Instance, Query, Referent, ShapeKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    /// Probability that a generated mask is dilated or eroded.
    pub mask_prob: f64,
    /// Corruption radius as a fraction of the mask's shorter bbox side.
    pub radius_frac: f64,
    /// Probability that a caption's color word is replaced.
    pub caption_swap_prob: f64,
    /// Half-width of the uniform jitter added to match scores.
    pub score_jitter: f64,
}

impl Noise {
    pub const NONE: Noise = Noise {
        mask_prob: 0.0,
        radius_frac: 0.0,
        caption_swap_prob: 0.0,
        score_jitter: 0.0,
    };

    /// Mask corruption and caption swaps at rate `level`.
    pub fn level(level: f64) -> Self {
        Self {
            mask_prob: level,
            radius_frac: 0.25,
            caption_swap_prob: level,
            score_jitter: 0.05,
        }
    }
}

fn input_rng(seed: u64, stage: &str, image: &RgbImage, extra: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.as_raw());
    h.update(extra);
    let d = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
}

fn box_bytes(b: BBox) -> Vec<u8> {
    b.iter().flat_map(|v| (*v as u64).to_le_bytes()).collect()
}

/// Dilates or erodes `mask` by a radius proportional to its size.
pub fn corrupt_mask(mask: &Mask, radius_frac: f64, rng: &mut impl Rng) -> Mask {
    let side = mask.bbox().map_or(0, |b| (b[2] - b[0]).min(b[3] - b[1]));
    let radius = ((side as f64 * radius_frac).round() as usize).max(1);
    mask.morph(radius, rng.random_bool(0.5))
}

/// Reads a caption as a shape-world query; bare `color kind` phrases are
/// read as referring expressions.
pub fn parse_description(caption: &str) -> Option<Query> {
    let lower = caption.trim().to_lowercase();
    Query::from_caption(&lower).or_else(|| Query::from_caption(&format!("the {lower}")))
}

fn ground_exact(image: &RgbImage, caption: &str) -> Mask {
    let (h, w) = (image.height() as usize, image.width() as usize);
    let insts = parse_instances(image);
    parse_description(caption)
        .and_then(|q| rasterize_instances(&insts, h, w, &q).ok())
        .unwrap_or_else(|| Mask::zeros(h, w))
}

/// Oracle stages with optional noise on the mask generator, captioner and
/// scorer. Tagger, detector and grounder are always exact.
#[derive(Debug, Clone, Copy)]
pub struct OracleStages {
    pub seed: u64,
    pub noise: Noise,
}

impl OracleStages {
    pub fn exact() -> Self {
        Self {
            seed: 0,
            noise: Noise::NONE,
        }
    }

    pub fn noisy(noise: Noise, seed: u64) -> Self {
        Self { seed, noise }
    }

    pub fn stage_set(self) -> StageSet {
        StageSet {
            tagger: Box::new(self),
            detector: Box::new(self),
            masker: Box::new(self),
            captioner: Box::new(self),
            grounder: Box::new(self),
            scorer: Box::new(self),
        }
    }

    fn id_for(&self, stage: &str) -> String {
        if self.noise == Noise::NONE {
            format!("oracle-{stage}")
        } else {
            format!("noisy-oracle-{stage}(seed={})", self.seed)
        }
    }
}

impl Tagger for OracleStages {
    fn id(&self) -> String {
        self.id_for("tagger")
    }

    /// Names of the shape kinds present.
    fn tags(&self, image: &RgbImage) -> Result<Vec<String>> {
        let insts = parse_instances(image);
        Ok(ShapeKind::ALL
            .into_iter()
            .filter(|k| insts.iter().any(|i| i.kind == *k))
            .map(|k| k.name().to_string())
            .collect())
    }
}

impl Detector for OracleStages {
    fn id(&self) -> String {
        self.id_for("detector")
    }

    /// Tight boxes of the instances whose kind or color matches `tag`.
    fn detect(&self, image: &RgbImage, tag: &str) -> Result<Vec<BBox>> {
        let kind = tag.parse::<ShapeKind>().ok();
        let color = tag.parse::<Color>().ok();
        Ok(parse_instances(image)
            .into_iter()
            .filter(|i| Some(i.kind) == kind || Some(i.color) == color)
            .map(|i| i.bbox)
            .collect())
    }
}

impl MaskGenerator for OracleStages {
    fn id(&self) -> String {
        self.id_for("masker")
    }

    /// The instance covering most of `bbox`, clipped to it.
    fn segment(&self, image: &RgbImage, bbox: BBox) -> Result<Mask> {
        let (h, w) = (image.height() as usize, image.width() as usize);
        let inside = |r: usize, c: usize| r >= bbox[0] && r < bbox[2] && c >= bbox[1] && c < bbox[3];
        let region = Mask::from_fn(h, w, inside);
        let best = parse_instances(image)
            .into_iter()
            .map(|i| (i.mask.intersection_count(&region), i))
            .filter(|(n, _)| *n > 0)
            .max_by_key(|(n, _)| *n);
        let clean = match best {
            Some((_, inst)) => inst.mask.intersection(&region),
            None => Mask::zeros(h, w),
        };
        let mut rng = input_rng(self.seed, "masker", image, &box_bytes(bbox));
        if self.noise.mask_prob > 0.0 && rng.random_bool(self.noise.mask_prob) {
            return Ok(corrupt_mask(&clean, self.noise.radius_frac, &mut rng));
        }
        Ok(clean)
    }
}

fn describe(insts: &[Instance], color_of: impl Fn(Color) -> Color) -> Option<String> {
    match insts {
        [] => None,
        [one] => Some(format!("{} {}", color_of(one.color), one.kind)),
        many => {
            let big = many.iter().max_by_key(|i| i.area)?;
            Some(
                Referent::Superlative {
                    extreme: Extreme::Largest,
                    color: Some(color_of(big.color)),
                    kind: Some(big.kind),
                }
                .describe(),
            )
        }
    }
}

impl Captioner for OracleStages {
    fn id(&self) -> String {
        self.id_for("captioner")
    }

    /// `{color} {kind}` for a single shape (a crop); otherwise a referring
    /// description of the largest shape.
    fn caption(&self, image: &RgbImage) -> Result<Option<String>> {
        let insts = parse_instances(image);
        let mut rng = input_rng(self.seed, "captioner", image, &[]);
        let swap = self.noise.caption_swap_prob > 0.0 && rng.random_bool(self.noise.caption_swap_prob);
        let offset = rng.random_range(1..Color::ALL.len());
        Ok(describe(&insts, |c| {
            if swap {
                {
                let i = Color::ALL.iter().position(|x| *x == c).unwrap_or(0);
                Color::ALL[(i + offset) % Color::ALL.len()]
            }
            } else {
                c
            }
        }))
    }
}

impl Grounder for OracleStages {
    fn id(&self) -> String {
        self.id_for("grounder")
    }

    fn ground(&self, image: &RgbImage, caption: &str) -> Result<Mask> {
        Ok(ground_exact(image, caption))
    }
}

impl MatchScorer for OracleStages {
    fn id(&self) -> String {
        self.id_for("scorer")
    }

    /// IoU between `mask` and the exact grounding of `caption`, plus jitter.
    /// Captions that ground to nothing score 0.
    fn score(&self, image: &RgbImage, mask: &Mask, caption: &str) -> Result<f64> {
        let truth = ground_exact(image, caption);
        let base = if truth.is_empty() { 0.0 } else { iou(mask, &truth)? };
        if self.noise.score_jitter == 0.0 {
            return Ok(base);
        }
        let mut extra = mask.as_slice().to_vec();
        extra.extend_from_slice(caption.as_bytes());
        let mut rng = input_rng(self.seed, "scorer", image, &extra);
        let j = self.noise.score_jitter;
        Ok((base + rng.random_range(-j..=j)).clamp(0.0, 1.0))
    }
}
