//! `langseg` command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use candle_core::{DType, Device};
use clap::{Parser, Subcommand, ValueEnum};
use image::{GrayImage, RgbImage};

use langseg::annotate::{
    filter_triplets, run_box_route, run_mask_route, run_unlabeled_route, BBox, Noise, OracleStages, PseudoBatch,
};
use langseg::data::{corpus_digest, load_manifest, write_manifest, Task, Triplet};
use langseg::eval::evaluate;
use langseg::nn::SegModel;
use langseg::shapes::{build_corpus, CorpusSpec, SceneConfig};
use langseg::train::{load_model, save_checkpoint, stage_data, Checkpoint, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "langseg", version, about = "Language-guided universal segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Route {
    Box,
    Mask,
    Unlabeled,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stages {
    Oracle,
    NoisyOracle,
}

#[derive(clap::Args)]
struct StageArgs {
    /// Stage implementations.
    #[arg(long, value_enum, default_value = "oracle")]
    stages: Stages,
    /// Corruption rate for the noisy oracle.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl StageArgs {
    fn oracle(&self) -> Result<OracleStages> {
        if !(0.0..=1.0).contains(&self.noise) {
            bail!("--noise must be in [0, 1], got {}", self.noise);
        }
        Ok(match self.stages {
            Stages::Oracle => OracleStages::exact(),
            Stages::NoisyOracle => OracleStages::noisy(Noise::level(self.noise), self.seed),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a shape-world corpus manifest.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of triplets (one per scene).
        #[arg(long, default_value_t = 256)]
        count: usize,
        /// Square canvas side in pixels.
        #[arg(long, default_value_t = 64)]
        canvas: usize,
        /// Comma-separated tasks, e.g. `ris,ss,ovs,ps,sod,rvos`.
        #[arg(long, default_value = "ris,ss,ovs,ps,sod", value_delimiter = ',')]
        tasks: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Produce pseudo-labeled triplets from the images of a manifest.
    Annotate {
        #[arg(long, value_enum)]
        route: Route,
        #[command(flatten)]
        stages: StageArgs,
        /// Drop triplets scoring below this after annotation.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        in_manifest: PathBuf,
        #[arg(long)]
        out_manifest: PathBuf,
    },
    /// Re-score triplets and keep those at or above the threshold.
    Filter {
        #[command(flatten)]
        stages: StageArgs,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        in_manifest: PathBuf,
        #[arg(long)]
        out_manifest: PathBuf,
    },
    /// Train one stage from a flat key/value config.
    Train {
        #[arg(long)]
        stage: u32,
        #[arg(long)]
        config: PathBuf,
        /// Overrides `checkpoint_out` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a single-task manifest.
    Eval {
        #[arg(long)]
        task: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for `metrics_<task>.txt` and `metrics_<task>.json`.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Segment one image for one caption.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        caption: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData {
            seed,
            count,
            canvas,
            tasks,
            out_dir,
        } => gen_data(seed, count, canvas, &tasks, &out_dir),
        Command::Annotate {
            route,
            stages,
            threshold,
            in_manifest,
            out_manifest,
        } => annotate(route, &stages, threshold, &in_manifest, &out_manifest),
        Command::Filter {
            stages,
            threshold,
            in_manifest,
            out_manifest,
        } => filter(&stages, threshold, &in_manifest, &out_manifest),
        Command::Train { stage, config, out } => train(stage, &config, out),
        Command::Eval {
            task,
            manifest,
            checkpoint,
            out_dir,
        } => eval(&task, &manifest, &checkpoint, &out_dir),
        Command::Infer {
            image,
            caption,
            checkpoint,
            out,
        } => infer(&image, &caption, &checkpoint, &out),
    }
}

fn gen_data(seed: u64, count: usize, canvas: usize, tasks: &[String], out_dir: &Path) -> Result<()> {
    let tasks = tasks
        .iter()
        .map(|t| t.parse::<Task>())
        .collect::<langseg::Result<Vec<_>>>()?;
    let corpus = build_corpus(&CorpusSpec {
        seed,
        count,
        scene: SceneConfig::square(canvas),
        tasks,
    })?;
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&corpus, &manifest)?;
    let digest = corpus_digest(&corpus);
    fs::write(out_dir.join("corpus.sha256"), format!("{digest}\n"))?;
    println!("{} triplets -> {}", corpus.len(), manifest.display());
    println!("sha256 {digest}");
    Ok(())
}

/// Distinct images of a manifest in first-seen order, with the tight boxes
/// of their masks.
fn images_with_boxes(triplets: &[Triplet]) -> Vec<(Arc<RgbImage>, Vec<BBox>)> {
    let mut out: Vec<(Arc<RgbImage>, Vec<BBox>)> = Vec::new();
    for t in triplets {
        let slot = match out.iter().position(|(img, _)| Arc::ptr_eq(img, &t.image)) {
            Some(i) => i,
            None => {
                out.push((t.image.clone(), Vec::new()));
                out.len() - 1
            }
        };
        if let Some(b) = t.mask.bbox() {
            if !out[slot].1.contains(&b) {
                out[slot].1.push(b);
            }
        }
    }
    out
}

fn annotate(route: Route, args: &StageArgs, threshold: Option<f64>, input: &Path, output: &Path) -> Result<()> {
    let oracle = args.oracle()?;
    let stages = oracle.stage_set();
    let source = load_manifest(input).with_context(|| format!("reading {}", input.display()))?;
    let mut batch = PseudoBatch::default();
    for (image, boxes) in images_with_boxes(&source) {
        batch.extend(match route {
            Route::Box => run_box_route(&image, &boxes, &stages)?,
            Route::Mask => run_mask_route(&image, &stages)?,
            Route::Unlabeled => run_unlabeled_route(&image, &stages)?,
        });
    }
    let produced = batch.len();
    if let Some(tau) = threshold {
        batch = filter_triplets(&batch, stages.scorer.as_ref(), tau)?;
    }
    write_manifest(&batch.triplets, output)?;
    println!(
        "{produced} pseudo triplets, {} written -> {} ({} candidates dropped)",
        batch.len(),
        output.display(),
        batch.dropped.len()
    );
    Ok(())
}

fn filter(args: &StageArgs, threshold: f64, input: &Path, output: &Path) -> Result<()> {
    let stages = args.oracle()?.stage_set();
    let triplets = load_manifest(input).with_context(|| format!("reading {}", input.display()))?;
    let batch = PseudoBatch {
        triplets,
        ..PseudoBatch::default()
    };
    let kept = filter_triplets(&batch, stages.scorer.as_ref(), threshold)?;
    write_manifest(&kept.triplets, output)?;
    println!("kept {} of {} at threshold {threshold}", kept.len(), batch.len());
    Ok(())
}

/// Config paths are read relative to the config file.
fn resolve(base: &Path, p: &Option<PathBuf>) -> Option<PathBuf> {
    p.as_ref().map(|p| if p.is_relative() { base.join(p) } else { p.clone() })
}

fn train(stage: u32, config_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let cfg = TrainConfig::parse_with_stage(&text, &config_path.display().to_string(), Some(stage))?;
    cfg.validate()?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let load = |p: Option<PathBuf>| -> Result<Vec<Triplet>> {
        match p {
            Some(p) => load_manifest(&p).with_context(|| format!("reading {}", p.display())),
            None => Ok(Vec::new()),
        }
    };
    let supervised = load(resolve(base, &cfg.supervised_manifest))?;
    let pseudo = load(resolve(base, &cfg.pseudo_manifest))?;
    let data = stage_data(&cfg, supervised, pseudo);
    if data.is_empty() {
        bail!("stage {stage} has no training data; set pseudo_manifest (and supervised_manifest for stage 2)");
    }
    let out = out
        .or_else(|| resolve(base, &cfg.checkpoint_out))
        .unwrap_or_else(|| PathBuf::from(format!("stage{stage}.safetensors")));

    let device = Device::Cpu;
    let model = SegModel::new(&cfg.model, cfg.seed, DType::F32, &device)?;
    if let Some(init) = resolve(base, &cfg.init_checkpoint) {
        Checkpoint::read(&init)?.apply_to(&model)?;
        log::info!("initialized from {}", init.display());
    }
    log::info!(
        "stage {stage}: {} triplets, {} parameters, config {}",
        data.len(),
        model.params().element_count(),
        &cfg.hash()[..12]
    );
    let mut trainer = Trainer::new(model, cfg.clone());
    let mut curve = String::from("step\ttotal\tbce\tdice\n");
    trainer.fit_with(&data, |s| {
        println!("epoch {} lr {:.2e} loss {:.4}", s.epoch, s.lr, s.mean.total);
    })?;
    for (i, v) in trainer.curve.iter().enumerate() {
        curve.push_str(&format!("{i}\t{}\t{}\t{}\n", v.total, v.bce, v.dice));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&out, &trainer.model, Some(&trainer.optimizer), Some(&cfg), trainer.epoch)?;
    let curve_path = out.with_extension("loss.tsv");
    fs::write(&curve_path, curve)?;
    println!("checkpoint -> {}", out.display());
    println!("loss curve -> {}", curve_path.display());
    Ok(())
}

fn eval(task: &str, manifest: &Path, checkpoint: &Path, out_dir: &Path) -> Result<()> {
    let task: Task = task.parse()?;
    let model = load_model(checkpoint, &Device::Cpu)?;
    let triplets = load_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let report = evaluate(&model, &triplets, task)?;
    fs::create_dir_all(out_dir)?;
    let name = task.as_str().to_lowercase();
    let kv = out_dir.join(format!("metrics_{name}.txt"));
    fs::write(&kv, report.to_kv_text())?;
    let summary: BTreeMap<&str, serde_json::Value> = BTreeMap::from([
        ("task", report.task.clone().into()),
        ("samples", report.samples.into()),
        ("mean_iou", report.mean_iou().into()),
        ("metrics", serde_json::to_value(&report.metrics)?),
        ("checkpoint", checkpoint.display().to_string().into()),
        ("manifest", manifest.display().to_string().into()),
    ]);
    let json = out_dir.join(format!("metrics_{name}.json"));
    fs::write(&json, serde_json::to_string_pretty(&summary)? + "\n")?;
    print!("{}", report.to_kv_text());
    Ok(())
}

fn infer(image: &Path, caption: &str, checkpoint: &Path, out: &Path) -> Result<()> {
    let model = load_model(checkpoint, &Device::Cpu)?;
    let img = image::open(image)
        .with_context(|| format!("reading {}", image.display()))?
        .to_rgb8();
    let mask = model.infer(&img, caption)?;
    let (h, w) = mask.dims();
    let pixels: Vec<u8> = mask.as_slice().iter().map(|&v| v * 255).collect();
    GrayImage::from_raw(w as u32, h as u32, pixels)
        .context("mask buffer")?
        .save(out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("{} foreground pixels of {} -> {}", mask.count(), h * w, out.display());
    Ok(())
}
