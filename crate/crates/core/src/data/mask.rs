use crate::error::{Error, Result};

/// Row-major H×W grid holding a segmentation mask.
///
/// Values are expected to be in {0, 1}; [`Mask::from_raw`] skips that check
/// so that malformed data can be represented and rejected by validation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds a mask from arbitrary bytes without checking binarity.
    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "mask buffer has {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a mask from real values, each of which must be exactly 0 or 1.
    pub fn from_f32(height: usize, width: usize, values: &[f32]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "mask buffer has {} values, expected {}",
                values.len(),
                height * width
            )));
        }
        let data = values
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(0),
                v if v == 1.0 => Ok(1),
                v => Err(Error::NonBinaryMask(v)),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value as u8;
    }

    /// First value outside {0, 1}, if any.
    pub fn first_nonbinary(&self) -> Option<u8> {
        self.data.iter().copied().find(|&v| v > 1)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a != 0 && b != 0)
            .count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a != 0 || b != 0)
            .count()
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.dims(), other.dims(), "mask dims differ");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a != 0, b != 0) as u8)
            .collect();
        Mask {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Tight bounding box `[row0, col0, row1, col1)` of the foreground.
    pub fn bbox(&self) -> Option<[usize; 4]> {
        let mut bb: Option<[usize; 4]> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    let b = bb.get_or_insert([r, c, r + 1, c + 1]);
                    b[0] = b[0].min(r);
                    b[1] = b[1].min(c);
                    b[2] = b[2].max(r + 1);
                    b[3] = b[3].max(c + 1);
                }
            }
        }
        bb
    }

    /// Morphological dilation (`grow = true`) or erosion with a square
    /// structuring element of the given radius. Pixels outside the grid count
    /// as background.
    pub fn morph(&self, radius: usize, grow: bool) -> Mask {
        let (h, w) = self.dims();
        let r = radius as isize;
        Mask::from_fn(h, w, |row, col| {
            let mut any = false;
            let mut all = true;
            for dr in -r..=r {
                for dc in -r..=r {
                    let (y, x) = (row as isize + dr, col as isize + dc);
                    let v = y >= 0
                        && x >= 0
                        && (y as usize) < h
                        && (x as usize) < w
                        && self.get(y as usize, x as usize);
                    any |= v;
                    all &= v;
                }
            }
            if grow {
                any
            } else {
                all
            }
        })
    }

    /// Values as 0.0 / 1.0.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| (v != 0) as u8 as f32).collect()
    }
}

/// Row-major H×W grid of foreground probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "probability buffer has {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            data: mask.to_f32(),
        }
    }

    /// Strict `p > threshold` binarization.
    pub fn binarize(&self, threshold: f32) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&p| (p > threshold) as u8).collect(),
        }
    }
}
