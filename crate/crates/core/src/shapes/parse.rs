use image::RgbImage;

use super::{Color, Instance, Part, ShapeKind, BACKGROUND};
use crate::data::Mask;

fn classify(px: [u8; 3]) -> Option<(Color, Part)> {
    Color::ALL.into_iter().find_map(|c| {
        if px == c.fill() {
            Some((c, Part::Interior))
        } else if px == c.border() {
            Some((c, Part::Border))
        } else {
            None
        }
    })
}

/// Recovers shape instances from a rendered shape-world image.
///
/// Components are 4-connected runs of shape-colored pixels. The kind is
/// read off the bounding-box fill ratio (square ≈ 1, circle ≈ π/4,
/// triangle ≈ 1/2).
pub fn parse_instances(image: &RgbImage) -> Vec<Instance> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let labels: Vec<Option<(Color, Part)>> = image
        .pixels()
        .map(|p| if p.0 == BACKGROUND { None } else { classify(p.0) })
        .collect();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] || labels[start].is_none() {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut mask = Mask::zeros(h, w);
        let mut border = Mask::zeros(h, w);
        let mut interior = Mask::zeros(h, w);
        let mut votes = [0usize; 4];
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            let (color, part) = labels[i].expect("labelled pixel");
            votes[color as usize] += 1;
            mask.set(r, c, true);
            match part {
                Part::Border => border.set(r, c, true),
                Part::Interior => interior.set(r, c, true),
            }
            let mut push = |j: usize| {
                if !seen[j] && labels[j].is_some() {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                push(i - w);
            }
            if r + 1 < h {
                push(i + w);
            }
            if c > 0 {
                push(i - 1);
            }
            if c + 1 < w {
                push(i + 1);
            }
        }
        let bbox = mask.bbox().expect("non-empty component");
        let area = mask.count();
        let box_area = (bbox[2] - bbox[0]) * (bbox[3] - bbox[1]);
        let ratio = area as f64 / box_area as f64;
        let kind = if ratio > 0.9 {
            ShapeKind::Square
        } else if ratio > 0.65 {
            ShapeKind::Circle
        } else {
            ShapeKind::Triangle
        };
        let color = Color::ALL[(0..4).max_by_key(|&k| votes[k]).expect("four colors")];
        out.push(Instance {
            kind,
            color,
            mask,
            border,
            interior,
            bbox,
            area,
        });
    }
    out
}
