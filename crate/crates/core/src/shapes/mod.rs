//! Deterministic synthetic scenes with exact ground truth.
//!
//! Shapes are rasterized without anti-aliasing: a pixel belongs to a shape
//! iff its center lies inside the shape's geometry, so every mask is an exact
//! integer function of the scene.

mod corpus;
mod parse;
mod query;

use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use corpus::{
    build_corpus, generate_video, scene_to_triplets, video_to_triplets, CorpusSpec, Granularity,
};
pub use parse::parse_instances;
pub use query::{
    instances, rasterize_instances, rasterize_mask, referring_queries, CategorySel, Extreme, Instance, Query, Referent,
    Relation,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn fill(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 200, 60],
            Color::Blue => [50, 80, 230],
            Color::Yellow => [230, 210, 40],
        }
    }

    pub fn border(self) -> [u8; 3] {
        self.fill().map(|v| v / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    Border,
    Interior,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Border => "border",
            Part::Interior => "interior",
        }
    }
}

macro_rules! named_from_str {
    ($ty:ty, [$($v:expr),*]) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                [$($v),*]
                    .into_iter()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown {} `{s}`", stringify!($ty))))
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named_from_str!(ShapeKind, [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle]);
named_from_str!(Color, [Color::Red, Color::Green, Color::Blue, Color::Yellow]);
named_from_str!(Part, [Part::Border, Part::Interior]);

pub const BACKGROUND: [u8; 3] = [38, 38, 38];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub color: Color,
    /// (row, col) of the geometric center, in pixel-corner coordinates.
    pub center: (i64, i64),
    /// Diameter (circle) or side / bounding-box side (square, triangle).
    pub size: u32,
    pub border_width: u32,
}

impl Shape {
    /// Distance from pixel `(row, col)`'s center to the shape outline,
    /// positive inside. Inside is `depth >= 0`, interior is
    /// `depth >= border_width`.
    pub fn depth(&self, row: usize, col: usize) -> f64 {
        let y = row as f64 + 0.5 - self.center.0 as f64;
        let x = col as f64 + 0.5 - self.center.1 as f64;
        let half = self.size as f64 / 2.0;
        match self.kind {
            ShapeKind::Circle => half - (y * y + x * x).sqrt(),
            ShapeKind::Square => half - y.abs().max(x.abs()),
            ShapeKind::Triangle => {
                // Apex up, base at the bottom of the bounding box.
                let apex = (-half, 0.0);
                let left = (half, -half);
                let right = (half, half);
                [(apex, right), (right, left), (left, apex)]
                    .into_iter()
                    .map(|((ay, ax), (by, bx))| {
                        // Clockwise winding in (row, col): inside is to the right.
                        let (ey, ex) = (by - ay, bx - ax);
                        let len = (ey * ey + ex * ex).sqrt();
                        (ex * (y - ay) - ey * (x - ax)) / len
                    })
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.depth(row, col) >= 0.0
    }

    pub fn part_at(&self, row: usize, col: usize) -> Option<Part> {
        let d = self.depth(row, col);
        if d < 0.0 {
            None
        } else if d < self.border_width as f64 {
            Some(Part::Border)
        } else {
            Some(Part::Interior)
        }
    }

    /// Half-open pixel box `[row0, col0, row1, col1)` of the nominal
    /// geometry. Pixels whose centers lie exactly on the outline can sit one
    /// pixel outside it.
    pub fn extent(&self) -> [i64; 4] {
        let lo = self.size as i64 / 2;
        let hi = (self.size as i64 + 1) / 2;
        [
            self.center.0 - lo,
            self.center.1 - lo,
            self.center.0 + hi,
            self.center.1 + hi,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub min_size: u32,
    pub max_size: u32,
    /// Minimum empty pixels between shape boxes.
    pub gap: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_shapes: 1,
            max_shapes: 3,
            min_size: 16,
            max_size: 28,
            gap: 3,
        }
    }
}

impl SceneConfig {
    pub fn square(canvas: usize) -> Self {
        let mut cfg = Self {
            height: canvas,
            width: canvas,
            ..Self::default()
        };
        cfg.max_size = cfg.max_size.min((canvas / 2) as u32).max(cfg.min_size);
        cfg
    }

    fn check(&self) -> Result<()> {
        let side = self.height.min(self.width);
        if side < 32 {
            return Err(Error::InfeasibleConfig(format!(
                "canvas {}x{} is smaller than 32x32",
                self.height, self.width
            )));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return Err(Error::InfeasibleConfig(format!(
                "empty shape-count range {}..={}",
                self.min_shapes, self.max_shapes
            )));
        }
        if self.min_size < 4 || self.min_size > self.max_size {
            return Err(Error::InfeasibleConfig(format!(
                "bad size range {}..={}",
                self.min_size, self.max_size
            )));
        }
        if self.min_size as usize > side {
            return Err(Error::InfeasibleConfig(format!(
                "min size {} exceeds canvas side {side}",
                self.min_size
            )));
        }
        let cell = (self.min_size + self.gap) as usize;
        if self.min_shapes * cell * cell > self.height * self.width {
            return Err(Error::InfeasibleConfig(format!(
                "{} shapes of size {} cannot fit",
                self.min_shapes, self.min_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub shapes: Vec<Shape>,
}

const SCENE_ATTEMPTS: usize = 500;
const PLACEMENT_ATTEMPTS: usize = 200;

pub fn border_width_for(size: u32) -> u32 {
    (size / 4).max(1)
}

fn boxes_clear(a: [i64; 4], b: [i64; 4], gap: i64) -> bool {
    a[2] + gap <= b[0] || b[2] + gap <= a[0] || a[3] + gap <= b[1] || b[3] + gap <= a[1]
}

fn layout_ok(scene: &Scene, gap: i64) -> bool {
    let inside = scene.shapes.iter().all(|s| {
        let e = s.extent();
        e[0] >= 0 && e[1] >= 0 && e[2] <= scene.height as i64 && e[3] <= scene.width as i64
    });
    let separated = scene.shapes.iter().enumerate().all(|(i, a)| {
        scene.shapes[i + 1..]
            .iter()
            .all(|b| boxes_clear(a.extent(), b.extent(), gap))
    });
    inside && separated
}

/// True when exactly one shape has the largest pixel area and every shape
/// has a non-empty border and interior.
fn areas_ok(scene: &Scene) -> bool {
    let insts = instances(scene);
    if insts.iter().any(|i| i.border.is_empty() || i.interior.is_empty()) {
        return false;
    }
    let max = insts.iter().map(|i| i.area).max().unwrap_or(0);
    insts.iter().filter(|i| i.area == max).count() == 1
}

/// Generates the scene for `seed`. Identical `(seed, config)` always yields
/// an identical scene.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = config.gap as i64;
    for _ in 0..SCENE_ATTEMPTS {
        let count = rng.random_range(config.min_shapes..=config.max_shapes);
        let mut scene = Scene {
            seed,
            height: config.height,
            width: config.width,
            shapes: Vec::with_capacity(count),
        };
        for _ in 0..count {
            for _ in 0..PLACEMENT_ATTEMPTS {
                let size = rng.random_range(config.min_size..=config.max_size);
                let lo = size as i64 / 2;
                let hi = (size as i64 + 1) / 2;
                let (rmax, cmax) = (config.height as i64 - hi, config.width as i64 - hi);
                if rmax < lo || cmax < lo {
                    continue;
                }
                let shape = Shape {
                    kind: ShapeKind::ALL[rng.random_range(0..3)],
                    color: Color::ALL[rng.random_range(0..4)],
                    center: (rng.random_range(lo..=rmax), rng.random_range(lo..=cmax)),
                    size,
                    border_width: border_width_for(size),
                };
                if scene
                    .shapes
                    .iter()
                    .all(|s| boxes_clear(s.extent(), shape.extent(), gap))
                {
                    scene.shapes.push(shape);
                    break;
                }
            }
        }
        if scene.shapes.len() == count && areas_ok(&scene) {
            return Ok(scene);
        }
    }
    Err(Error::InfeasibleConfig(format!(
        "no valid layout after {SCENE_ATTEMPTS} attempts"
    )))
}

/// Moves every shape by up to `jitter` pixels per axis, keeping the layout
/// valid. Falls back to the unmoved scene when no valid jitter is found.
pub fn jitter_scene(scene: &Scene, jitter: u32, gap: u32, rng: &mut impl Rng) -> Scene {
    let j = jitter as i64;
    for _ in 0..100 {
        let mut moved = scene.clone();
        for s in &mut moved.shapes {
            s.center.0 += rng.random_range(-j..=j);
            s.center.1 += rng.random_range(-j..=j);
        }
        if layout_ok(&moved, gap as i64) && areas_ok(&moved) {
            return moved;
        }
    }
    scene.clone()
}

pub fn render_image(scene: &Scene) -> RgbImage {
    RgbImage::from_fn(scene.width as u32, scene.height as u32, |x, y| {
        let (row, col) = (y as usize, x as usize);
        let px = scene
            .shapes
            .iter()
            .find_map(|s| {
                s.part_at(row, col).map(|p| match p {
                    Part::Border => s.color.border(),
                    Part::Interior => s.color.fill(),
                })
            })
            .unwrap_or(BACKGROUND);
        Rgb(px)
    })
}
