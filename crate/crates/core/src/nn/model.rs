//! The full segmentation network.

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::Linear;
use image::RgbImage;

use super::config::ModelConfig;
use super::decoder::{similarity_logits, DetailStem, Fpn, LanguagePath, VisionPathBlock};
use super::layers::{tokens_to_grid, upsample_bilinear, ParamBuilder, ParamSet};
use super::prefusion::PreFusion;
use super::text::{tokenize, TextEncoder, TokenBatch, Tokens, Vocab};
use super::vision::VisionEncoder;
use crate::data::{Mask, ProbMap};
use crate::error::{Error, Result};

/// Parameter-name prefix of the image backbone.
pub const BACKBONE_PREFIX: &str = "vision.";

/// Binarization threshold applied to sigmoid probabilities (strict `>`).
pub const MASK_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone)]
pub struct SegOutput {
    /// Similarity logits at stride 2 with a detail stem, stride 4 without.
    pub low_logits: Tensor,
    /// `(B, H, W)` logits after bilinear upsampling.
    pub logits: Tensor,
}

impl SegOutput {
    pub fn probs(&self) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.logits)?)
    }
}

pub struct SegModel {
    cfg: ModelConfig,
    vocab: Vocab,
    params: ParamSet,
    vision: VisionEncoder,
    text: TextEncoder,
    prefusion: Vec<PreFusion>,
    word_proj: Linear,
    vision_path: Vec<Vec<VisionPathBlock>>,
    fpn: Fpn,
    detail: Option<DetailStem>,
    language: LanguagePath,
    scale: Option<Tensor>,
    dtype: DType,
    device: Device,
}

impl SegModel {
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let vocab = match &cfg.vocab_path {
            Some(p) => Vocab::from_file(p)?,
            None => Vocab::shape_world(),
        };
        let pb = ParamBuilder::new(seed, dtype, device);
        let c = cfg.joint_dim;
        let vision = VisionEncoder::new(&pb.pp("vision"), cfg)?;
        let text = TextEncoder::new(&pb.pp("text"), cfg, vocab.len())?;
        let prefusion = (1..4)
            .map(|i| {
                PreFusion::new(
                    &pb.pp(format!("prefusion{}", i + 1)),
                    cfg.vision_channels[i],
                    cfg.text_dim,
                    c,
                    cfg.fusion_heads,
                )
            })
            .collect::<Result<_>>()?;
        let word_proj = pb.pp("decoder.word_proj").linear(cfg.text_dim, c, true)?;
        let vision_path = (1..4)
            .map(|i| {
                (0..cfg.decoder_depth)
                    .map(|d| VisionPathBlock::new(&pb.pp(format!("decoder.scale{}.block{d}", i + 1)), c, cfg.decoder_heads))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let fpn = Fpn::new(&pb.pp("decoder.fpn"), cfg.vision_channels[0], c)?;
        let detail = match cfg.detail_channels {
            0 => None,
            n => Some(DetailStem::new(&pb.pp("decoder.detail"), n, c)?),
        };
        let language = LanguagePath::new(&pb.pp("decoder.language"), cfg.text_dim, c, cfg.decoder_heads)?;
        let scale = if cfg.learnable_temperature {
            Some(pb.constant("decoder.scale", &[1], 1.0)?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            vocab,
            params: pb.finish(),
            vision,
            text,
            prefusion,
            word_proj,
            vision_path,
            fpn,
            detail,
            language,
            scale,
            dtype,
            device: device.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn tokenize(&self, caption: &str) -> Result<Tokens> {
        tokenize(caption, &self.vocab, self.cfg.max_len)
    }

    pub fn token_batch<S: AsRef<str>>(&self, captions: &[S]) -> Result<TokenBatch> {
        let tokens = captions
            .iter()
            .map(|c| self.tokenize(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        TokenBatch::new(&tokens, self.dtype, &self.device)
    }

    /// `(B, 3, H, W)` images in [0, 1] plus their captions.
    pub fn forward(&self, images: &Tensor, tokens: &TokenBatch) -> Result<SegOutput> {
        let (_, _, height, width) = images.dims4()?;
        let pyramid = self.vision.forward(images)?;
        let text = self.text.forward(tokens)?;
        let words = self.word_proj.forward(&text.words)?;
        let mut decoded = Vec::with_capacity(3);
        let mut coarsest = None;
        for (i, level) in pyramid.levels.iter().enumerate().skip(1) {
            let f_c = self.prefusion[i - 1].forward(&level.tokens, &text.words, &text.mask)?;
            let mut f_b = f_c.clone();
            for block in &self.vision_path[i - 1] {
                f_b = block.forward(&f_b, level.height, level.width, &words, &text.mask)?;
            }
            decoded.push(tokens_to_grid(&f_b, level.height, level.width)?);
            coarsest = Some(f_c);
        }
        let fine = &pyramid.levels[0];
        let fused = self.fpn.forward(
            [&decoded[0], &decoded[1], &decoded[2]],
            &tokens_to_grid(&fine.tokens, fine.height, fine.width)?,
        )?;
        let fused = match &self.detail {
            Some(d) => d.forward(&fused, images)?,
            None => fused,
        };
        let prompt = self.language.forward(&text.sentence, coarsest.as_ref().expect("three levels"))?;
        let low_logits = similarity_logits(&fused, &prompt, self.scale.as_ref())?;
        let logits = upsample_bilinear(&low_logits, height, width)?;
        Ok(SegOutput { low_logits, logits })
    }

    /// Packs RGB images into a `(B, 3, H, W)` tensor in [0, 1].
    pub fn image_batch(&self, images: &[&RgbImage]) -> Result<Tensor> {
        let t = images_to_tensor(images, &self.device)?;
        Ok(t.to_dtype(self.dtype)?)
    }

    /// Sigmoid probabilities at full resolution for one image and caption.
    pub fn predict_prob(&self, image: &RgbImage, caption: &str) -> Result<ProbMap> {
        let tokens = self.token_batch(&[caption])?;
        let out = self.forward(&self.image_batch(&[image])?, &tokens)?;
        let probs = out.probs()?.squeeze(0)?.to_dtype(DType::F32)?;
        let (h, w) = probs.dims2()?;
        ProbMap::new(h, w, probs.flatten_all()?.to_vec1::<f32>()?)
    }

    /// Binary mask for one image and caption.
    pub fn infer(&self, image: &RgbImage, caption: &str) -> Result<Mask> {
        if caption.trim().is_empty() {
            return Err(Error::EmptyCaption);
        }
        Ok(self.predict_prob(image, caption)?.binarize(MASK_THRESHOLD))
    }
}

/// `(B, 3, H, W)` f32 tensor with channel values scaled to [0, 1].
pub fn images_to_tensor(images: &[&RgbImage], device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (w, h) = first.dimensions();
    let (h, w) = (h as usize, w as usize);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.dimensions() != first.dimensions() {
            return Err(Error::InvalidArgument("images in a batch differ in size".into()));
        }
        for ch in 0..3 {
            data.extend(img.pixels().map(|p| p.0[ch] as f32 / 255.0));
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{generate_scene, render_image, SceneConfig};

    fn tiny() -> SegModel {
        SegModel::new(&ModelConfig::tiny(), 7, DType::F32, &Device::Cpu).unwrap()
    }

    fn scene_image(seed: u64, side: usize) -> RgbImage {
        render_image(&generate_scene(seed, &SceneConfig::square(side)).unwrap())
    }

    #[test]
    fn output_shapes() {
        let m = tiny();
        let img = scene_image(1, 32);
        let x = m.image_batch(&[&img, &img]).unwrap();
        let out = m.forward(&x, &m.token_batch(&["all circle", "the red square"]).unwrap()).unwrap();
        assert_eq!(out.low_logits.dims(), &[2, 16, 16]);
        assert_eq!(out.logits.dims(), &[2, 32, 32]);
    }

    #[test]
    fn infer_matches_image_shape_and_is_deterministic() {
        let m = tiny();
        let img = scene_image(2, 64);
        let a = m.infer(&img, "all circle").unwrap();
        assert_eq!(a.dims(), (64, 64));
        assert_eq!(a, m.infer(&img, "all circle").unwrap());
        assert!(matches!(m.infer(&img, "  "), Err(Error::EmptyCaption)));
        let odd = RgbImage::new(48, 40);
        assert!(matches!(m.infer(&odd, "all circle"), Err(Error::IndivisibleSize { .. })));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = tiny();
        let b = tiny();
        assert_eq!(a.params().len(), b.params().len());
        for ((na, va), (nb, vb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(na, nb);
            let da = va.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let db = vb.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(da, db);
        }
        assert!(a.params().iter().any(|(n, _)| n.starts_with(BACKBONE_PREFIX)));
    }

    #[test]
    fn batch_composition_does_not_leak() {
        let m = tiny();
        let (a, b) = (scene_image(3, 32), scene_image(4, 32));
        let single = m
            .forward(&m.image_batch(&[&a]).unwrap(), &m.token_batch(&["all circle"]).unwrap())
            .unwrap()
            .logits;
        let pair = m
            .forward(&m.image_batch(&[&a, &b]).unwrap(), &m.token_batch(&["all circle", "all red"]).unwrap())
            .unwrap()
            .logits
            .narrow(0, 0, 1)
            .unwrap();
        let d = (single - pair).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d < 1e-5, "{d}");
    }
}
