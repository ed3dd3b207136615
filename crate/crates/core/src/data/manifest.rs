//! JSON Lines manifest persistence.
//!
//! Line 1 is a header object; every following line is one triplet with keys
//! `image`, `mask`, `caption`, `task`, `source`, `score` (and `video_id` /
//! `frame` for video frames). Paths are relative to the manifest directory.
//! Images are stored as RGB PNG, masks as 8-bit single-channel PNG with
//! foreground 255. Files are content-addressed so shared images are written
//! once.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{validate_triplet, FrameRef, Mask, Triplet};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "langseg-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    image: String,
    mask: String,
    caption: String,
    task: String,
    source: String,
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<usize>,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn content_name(prefix: &str, width: u32, height: u32, bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(width.to_le_bytes());
    h.update(height.to_le_bytes());
    h.update(bytes);
    format!("{prefix}/{}.png", &hex(&h.finalize())[..20])
}

fn save_png_once(dir: &Path, rel: &str, save: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    let path = dir.join(rel);
    if path.exists() {
        return Ok(());
    }
    save(&path).map_err(|source| Error::Image { path, source })
}

/// Writes `triplets` to a manifest at `path`, with image and mask files in
/// `images/` and `masks/` next to it.
pub fn write_manifest(triplets: &[Triplet], path: &Path) -> Result<()> {
    for t in triplets {
        validate_triplet(t)?;
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    for sub in ["images", "masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
    };
    let mut lines = vec![serde_json::to_string(&header).expect("header serializes")];

    for t in triplets {
        let img = t.image.as_ref();
        let image_rel = content_name("images", img.width(), img.height(), img.as_raw());
        save_png_once(dir, &image_rel, |p| img.save(p))?;

        let (h, w) = t.mask.dims();
        let mask_bytes: Vec<u8> = t.mask.as_slice().iter().map(|&v| v * 255).collect();
        let mask_rel = content_name("masks", w as u32, h as u32, &mask_bytes);
        save_png_once(dir, &mask_rel, |p| {
            GrayImage::from_raw(w as u32, h as u32, mask_bytes.clone())
                .expect("buffer matches dims")
                .save(p)
        })?;

        let record = Record {
            image: image_rel,
            mask: mask_rel,
            caption: t.caption.clone(),
            task: t.task.to_string(),
            source: t.source.to_string(),
            score: t.score,
            video_id: t.frame.as_ref().map(|f| f.video_id.clone()),
            frame: t.frame.as_ref().map(|f| f.frame_index),
        };
        lines.push(serde_json::to_string(&record).expect("record serializes"));
    }
    for line in lines {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a manifest written by [`write_manifest`]. Every triplet is
/// validated.
pub fn load_manifest(path: &Path) -> Result<Vec<Triplet>> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let loc = |n: usize| format!("{}:{n}", path.display());

    let header_line = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(loc(1), "missing header line")),
    };
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| Error::parse(loc(1), e.to_string()))?;
    if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
        return Err(Error::parse(
            loc(1),
            format!("unsupported manifest {} v{}", header.format, header.version),
        ));
    }

    let mut images: HashMap<String, Arc<RgbImage>> = HashMap::new();
    let mut triplets = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::parse(loc(n), e.to_string()))?;

        let image = match images.get(&rec.image) {
            Some(img) => img.clone(),
            None => {
                let p = dir.join(&rec.image);
                let img = image::open(&p)
                    .map_err(|source| Error::Image { path: p, source })?
                    .to_rgb8();
                let img = Arc::new(img);
                images.insert(rec.image.clone(), img.clone());
                img
            }
        };
        let mask_path = dir.join(&rec.mask);
        let gray = image::open(&mask_path)
            .map_err(|source| Error::Image {
                path: mask_path,
                source,
            })?
            .to_luma8();
        let (w, h) = gray.dimensions();
        let data = gray
            .into_raw()
            .into_iter()
            .map(|v| match v {
                0 => 0,
                255 => 1,
                other => other,
            })
            .collect();
        let mask = Mask::from_raw(h as usize, w as usize, data)?;

        let frame = match (rec.video_id, rec.frame) {
            (Some(video_id), Some(frame_index)) => Some(FrameRef {
                video_id,
                frame_index,
            }),
            (None, None) => None,
            _ => return Err(Error::parse(loc(n), "video_id and frame must appear together")),
        };
        let t = Triplet {
            image,
            mask,
            caption: rec.caption,
            task: rec.task.parse()?,
            source: rec.source.parse()?,
            score: rec.score,
            frame,
        };
        validate_triplet(&t)?;
        triplets.push(t);
    }
    Ok(triplets)
}

/// SHA-256 over a canonical byte serialization of a corpus.
pub fn corpus_digest(triplets: &[Triplet]) -> String {
    let mut h = Sha256::new();
    for t in triplets {
        h.update(t.image.width().to_le_bytes());
        h.update(t.image.height().to_le_bytes());
        h.update(t.image.as_raw());
        h.update(t.mask.as_slice());
        h.update((t.caption.len() as u64).to_le_bytes());
        h.update(t.caption.as_bytes());
        h.update(t.task.as_str().as_bytes());
        h.update(t.source.as_str().as_bytes());
        h.update(t.score.map_or(u64::MAX, f64::to_bits).to_le_bytes());
        if let Some(f) = &t.frame {
            h.update(f.video_id.as_bytes());
            h.update((f.frame_index as u64).to_le_bytes());
        }
    }
    hex(&h.finalize())
}
