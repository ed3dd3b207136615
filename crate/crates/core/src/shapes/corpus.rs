use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::query::rasterize_instances;
use super::{
    generate_scene, instances, jitter_scene, referring_queries, render_image, CategorySel, Color,
    Instance, Part, Query, Scene, SceneConfig, ShapeKind,
};
use crate::data::{FrameRef, Task, Triplet};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    Category,
    Referring,
    Salient,
    Part,
}

impl Query {
    pub fn granularity(&self) -> Granularity {
        match self {
            Query::Category(_) => Granularity::Category,
            Query::Referring(_) => Granularity::Referring,
            Query::Salient => Granularity::Salient,
            Query::Part { .. } => Granularity::Part,
        }
    }
}

fn present<T: Ord + Copy>(insts: &[Instance], f: impl Fn(&Instance) -> T) -> Vec<T> {
    insts.iter().map(f).collect::<BTreeSet<_>>().into_iter().collect()
}

fn queries_for(task: Task, insts: &[Instance]) -> Vec<Query> {
    match task {
        Task::Ss => present(insts, |i| i.kind)
            .into_iter()
            .map(|k: ShapeKind| Query::Category(CategorySel::Kind(k)))
            .collect(),
        Task::Ovs => present(insts, |i| i.color)
            .into_iter()
            .map(|c: Color| Query::Category(CategorySel::Color(c)))
            .collect(),
        Task::Ps => present(insts, |i| i.kind)
            .into_iter()
            .flat_map(|kind| {
                [Part::Border, Part::Interior].map(|part| Query::Part { kind, part })
            })
            .collect(),
        Task::Sod => vec![Query::Salient],
        Task::Ris | Task::Rvos => referring_queries(insts)
            .into_iter()
            .map(|(_, r)| Query::Referring(r))
            .collect(),
    }
}

fn ordered(tasks: &[Task]) -> Vec<Task> {
    Task::ALL.into_iter().filter(|t| tasks.contains(t)).collect()
}

/// One supervised triplet per legal (task, query) pair of `scene`.
pub fn scene_to_triplets(scene: &Scene, tasks: &[Task]) -> Vec<Triplet> {
    let insts = instances(scene);
    let image = Arc::new(render_image(scene));
    let mut out = Vec::new();
    for task in ordered(tasks) {
        for q in queries_for(task, &insts) {
            let (Ok(mask), Ok(caption)) = (
                rasterize_instances(&insts, scene.height, scene.width, &q),
                q.caption(task),
            ) else {
                continue;
            };
            let mut t = Triplet::supervised(image.clone(), mask, caption, task);
            if task == Task::Rvos {
                t.frame = Some(FrameRef {
                    video_id: format!("scene-{}", scene.seed),
                    frame_index: 0,
                });
            }
            out.push(t);
        }
    }
    out
}

/// A short clip: frame 0 is `generate_scene(seed)`, later frames jitter
/// the previous frame's shape positions.
pub fn generate_video(seed: u64, config: &SceneConfig, frames: usize, jitter: u32) -> Result<Vec<Scene>> {
    let first = generate_scene(seed, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let mut out = vec![first];
    while out.len() < frames {
        let next = jitter_scene(out.last().expect("non-empty"), jitter, config.gap, &mut rng);
        out.push(next);
    }
    Ok(out)
}

/// RVOS triplets for a clip: every referring query that resolves in all
/// frames, one triplet per frame.
pub fn video_to_triplets(frames: &[Scene], video_id: &str) -> Vec<Triplet> {
    let per_frame: Vec<(Vec<Instance>, Arc<image::RgbImage>)> = frames
        .iter()
        .map(|s| (instances(s), Arc::new(render_image(s))))
        .collect();
    let Some((first, _)) = per_frame.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for q in queries_for(Task::Rvos, first) {
        let masks: Result<Vec<_>> = frames
            .iter()
            .zip(&per_frame)
            .map(|(s, (insts, _))| rasterize_instances(insts, s.height, s.width, &q))
            .collect();
        let (Ok(masks), Ok(caption)) = (masks, q.caption(Task::Rvos)) else {
            continue;
        };
        for (idx, (mask, (_, image))) in masks.into_iter().zip(&per_frame).enumerate() {
            let mut t = Triplet::supervised(image.clone(), mask, caption.clone(), Task::Rvos);
            t.frame = Some(FrameRef {
                video_id: video_id.to_string(),
                frame_index: idx,
            });
            out.push(t);
        }
    }
    out
}

/// Recipe for a reproducible corpus.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub seed: u64,
    /// Number of triplets to emit.
    pub count: usize,
    pub scene: SceneConfig,
    /// Tasks cycled through scene by scene.
    pub tasks: Vec<Task>,
}

/// Builds `count` triplets, one per scene, cycling through `tasks` so every
/// task is equally represented. Scene `i` uses seed `seed + i`; the triplet
/// is drawn uniformly among that scene's legal queries for the task.
pub fn build_corpus(spec: &CorpusSpec) -> Result<Vec<Triplet>> {
    let tasks = ordered(&spec.tasks);
    let mut out = Vec::with_capacity(spec.count);
    if tasks.is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut i = 0u64;
    while out.len() < spec.count {
        let task = tasks[out.len() % tasks.len()];
        let scene = generate_scene(spec.seed.wrapping_add(i), &spec.scene)?;
        i += 1;
        let mut options = scene_to_triplets(&scene, &[task]);
        if options.is_empty() {
            continue;
        }
        let pick = rng.random_range(0..options.len());
        out.push(options.swap_remove(pick));
    }
    Ok(out)
}
