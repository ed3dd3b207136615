//! Hide-and-seek patch masking for pseudo-labeled training images.

use image::RgbImage;
use rand::Rng;

use crate::error::{Error, Result};

/// Side of the square hiding patches, in pixels.
pub const HIDE_PATCH: usize = 16;
/// Probability that a patch is hidden.
pub const HIDE_PROB: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct Hidden {
    pub image: RgbImage,
    /// Patches replaced by the fill value.
    pub hidden: usize,
    pub patches: usize,
}

/// Replaces each `patch × patch` block independently with probability
/// `p_hide` by `fill`. The image dims must be multiples of `patch`.
pub fn hide_and_seek<R: Rng + ?Sized>(
    image: &RgbImage,
    patch: usize,
    p_hide: f64,
    fill: [u8; 3],
    rng: &mut R,
) -> Result<Hidden> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::IndivisibleSize {
            height: h,
            width: w,
            divisor: patch,
        });
    }
    if !(0.0..=1.0).contains(&p_hide) {
        return Err(Error::InvalidArgument(format!("hiding probability {p_hide} outside [0, 1]")));
    }
    let mut out = image.clone();
    let mut hidden = 0;
    for py in 0..h / patch {
        for px in 0..w / patch {
            if !rng.random_bool(p_hide) {
                continue;
            }
            hidden += 1;
            for y in py * patch..(py + 1) * patch {
                for x in px * patch..(px + 1) * patch {
                    out.put_pixel(x as u32, y as u32, image::Rgb(fill));
                }
            }
        }
    }
    Ok(Hidden {
        image: out,
        hidden,
        patches: (h / patch) * (w / patch),
    })
}

/// Per-channel mean pixel value over a set of images, rounded to u8.
pub fn channel_mean<'a, I: IntoIterator<Item = &'a RgbImage>>(images: I) -> [u8; 3] {
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for img in images {
        for p in img.pixels() {
            for c in 0..3 {
                sum[c] += p.0[c] as u64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return [0; 3];
    }
    sum.map(|s| ((s as f64) / n as f64).round() as u8)
}
