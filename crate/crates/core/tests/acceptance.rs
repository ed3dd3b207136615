//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. A substring argument runs only matching checks.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Module, Tensor};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use langseg::annotate::{filter_triplets, run_box_route, Noise, OracleStages};
use langseg::augment::{hide_and_seek, HIDE_PATCH, HIDE_PROB};
use langseg::data::{corpus_digest, render_prompt, write_manifest, Mask, ProbMap, Source, Task, Triplet};
use langseg::eval::Segmenter;
use langseg::losses::{segmentation_loss, LossWeights};
use langseg::metrics::{boundary_f, f_measure, iou, j_and_f, miou, oiou};
use langseg::nn::decoder::{LanguagePath, VisionPathBlock};
use langseg::nn::layers::sinusoidal_2d;
use langseg::nn::prefusion::PreFusion;
use langseg::nn::text::TextEncoder;
use langseg::nn::{ModelConfig, ParamBuilder, SegModel, TokenBatch, MASK_THRESHOLD};
use langseg::shapes::{build_corpus, generate_scene, instances, render_image, CorpusSpec, SceneConfig};
use langseg::train::{make_schedule, LrDecay, Trainer};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn max_abs(t: &Tensor) -> f64 {
    t.abs().unwrap().max_all().unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn pad_mask(real: &[usize], len: usize) -> Tensor {
    let v: Vec<f64> = real
        .iter()
        .flat_map(|&r| (0..len).map(move |i| (i < r) as u8 as f64))
        .collect();
    Tensor::from_vec(v, (real.len(), len), &Device::Cpu).unwrap()
}

// 1 ------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    const H: f64 = 1e-4;
    const PER_PARAM: usize = 4;
    let dev = Device::Cpu;
    let cfg = ModelConfig::tiny();
    let model = SegModel::new(&cfg, 11, DType::F64, &dev).unwrap();
    let data = build_corpus(&CorpusSpec {
        seed: 5,
        count: 2,
        scene: SceneConfig::square(cfg.image_size),
        tasks: vec![Task::Ris, Task::Ss],
    })
    .unwrap();
    let images: Vec<&RgbImage> = data.iter().map(|t| t.image.as_ref()).collect();
    let x = model.image_batch(&images).unwrap();
    let captions: Vec<&str> = data.iter().map(|t| t.caption.as_str()).collect();
    let tokens = model.token_batch(&captions).unwrap();
    let n = cfg.image_size;
    let target: Vec<f64> = data.iter().flat_map(|t| t.mask.to_f32()).map(f64::from).collect();
    let target = Tensor::from_vec(target, (data.len(), n, n), &dev).unwrap();
    let loss = || {
        let out = model.forward(&x, &tokens).unwrap();
        segmentation_loss(&out.logits, &target, LossWeights::default()).unwrap()
    };

    let grads = loss().0.backward().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    let mut groups = 0;
    for (name, var) in model.params().iter() {
        groups += 1;
        let shape = var.as_tensor().shape().clone();
        let orig: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; orig.len()],
        };
        // The largest analytic entry plus a few random ones.
        let mut picks = vec![(0..orig.len())
            .max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs()))
            .unwrap()];
        while picks.len() < PER_PARAM.min(orig.len()) {
            let i = rng.random_range(0..orig.len());
            if !picks.contains(&i) {
                picks.push(i);
            }
        }
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &i in &picks {
            let probe = |delta: f64| {
                let mut v = orig.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, shape.clone(), &dev).unwrap()).unwrap();
                loss().1.total
            };
            // Five-point stencil: truncation error O(h^4), so h can be large
            // enough to keep round-off well below the tolerance.
            let numeric = (8.0 * (probe(H) - probe(-H)) - (probe(2.0 * H) - probe(-2.0 * H))) / (12.0 * H);
            diff2 += (numeric - analytic[i]).powi(2);
            a2 += analytic[i].powi(2);
            n2 += numeric.powi(2);
        }
        var.set(&Tensor::from_vec(orig, shape, &dev).unwrap()).unwrap();
        let scale = a2.sqrt().max(n2.sqrt());
        let rel = if scale < 1e-10 { diff2.sqrt() } else { diff2.sqrt() / scale };
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
        if !(rel < 1e-4) {
            failures.push(format!("{name}: {rel:.2e}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{groups} parameter groups, worst relative error {:.2e} ({}){}",
            worst.0,
            worst.1,
            if failures.is_empty() {
                String::new()
            } else {
                format!("; over 1e-4: {}", failures.join(", "))
            }
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn architecture_invariants() -> Outcome {
    let dev = Device::Cpu;
    let pb = ParamBuilder::new(21, DType::F64, &dev);
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |cond: bool, what: String| {
        ok &= cond;
        notes.push(format!("{what} {}", if cond { "ok" } else { "BROKEN" }));
    };

    // Attention rows, including masked keys.
    let pf = PreFusion::new(&pb.pp("pf"), 32, 24, 64, 4).unwrap();
    let mask = pad_mask(&[3, 9], 12);
    let (_, w) = pf
        .forward_with_weights(&randn(&[2, 16, 32], 1), &randn(&[2, 12, 24], 2), &mask)
        .unwrap();
    let sums = w.sum(3).unwrap();
    let row_err = max_abs(&(sums - 1.0).unwrap());
    let padded = w.narrow(3, 9, 3).unwrap();
    check(
        row_err <= 1e-6 && max_abs(&padded) < 1e-12,
        format!("attention rows (max |sum-1| {row_err:.1e})"),
    );

    // Token-count contract: word outputs of the joint self-attention are
    // dropped, so the block returns exactly h·w tokens.
    let blk = VisionPathBlock::new(&pb.pp("vp"), 64, 4).unwrap();
    let (h, wd) = (4, 6);
    let f_c = randn(&[2, h * wd, 64], 3);
    let words = randn(&[2, 12, 64], 4);
    let f_b = blk.self_attend(&f_c, h, wd, &words, &mask).unwrap();
    let pos = sinusoidal_2d(h, wd, 64, DType::F64, &dev).unwrap();
    let joint = Tensor::cat(&[&f_c.broadcast_add(&pos).unwrap(), &words], 1).unwrap();
    let joint_mask = Tensor::cat(&[&Tensor::ones((2, h * wd), DType::F64, &dev).unwrap(), &mask], 1).unwrap();
    let full = blk.self_attn.forward(&joint, &joint, Some(&joint_mask)).unwrap();
    let kept = (blk.self_norm.forward(&full.narrow(1, 0, h * wd).unwrap()).unwrap() + &f_c).unwrap();
    check(
        full.dims() == [2, h * wd + 12, 64]
            && f_b.dims() == [2, h * wd, 64]
            && max_abs(&(&f_b - kept).unwrap()) < 1e-12,
        format!("token count ({} joint -> {} kept)", h * wd + 12, h * wd),
    );

    // Residual degenerate case: zero attention output leaves f_b = f_c.
    let mut zeroed = blk.clone();
    zeroed.self_attn.o = candle_nn::Linear::new(
        Tensor::zeros((64, 64), DType::F64, &dev).unwrap(),
        Some(Tensor::zeros(64, DType::F64, &dev).unwrap()),
    );
    let degenerate = zeroed.self_attend(&f_c, h, wd, &words, &mask).unwrap();
    check(max_abs(&(degenerate - &f_c).unwrap()) == 0.0, "residual degenerate case".into());

    // Word order: permuting real words (padding fixed) leaves the decoder
    // block and the language path unchanged.
    let perm: Vec<u32> = [2u32, 0, 1].into_iter().chain(3..12).collect();
    let idx = Tensor::new(perm.as_slice(), &dev).unwrap();
    let one = pad_mask(&[3], 12);
    let w1 = words.narrow(0, 0, 1).unwrap();
    let fc1 = f_c.narrow(0, 0, 1).unwrap();
    let a = blk.forward(&fc1, h, wd, &w1, &one).unwrap();
    let b = blk.forward(&fc1, h, wd, &w1.index_select(&idx, 1).unwrap(), &one).unwrap();
    let lp = LanguagePath::new(&pb.pp("lp"), 24, 64, 4).unwrap();
    let f_s = randn(&[1, 1, 24], 5);
    let vperm: Vec<u32> = (0..(h * wd) as u32).rev().collect();
    let vidx = Tensor::new(vperm.as_slice(), &dev).unwrap();
    let la = lp.forward(&f_s, &fc1).unwrap();
    let lb = lp.forward(&f_s, &fc1.index_select(&vidx, 1).unwrap()).unwrap();
    let order_err = max_abs(&(a - b).unwrap()).max(max_abs(&(la - lb).unwrap()));
    check(order_err < 1e-10, format!("word-order invariance ({order_err:.1e})"));

    // f_s does not see what sits in padded positions, nor how much padding
    // there is.
    let cfg = ModelConfig::desk();
    let text = TextEncoder::new(&pb.pp("text"), &cfg, 40).unwrap();
    let real = [1u32, 7, 9, 12, 2];
    let batch = |ids: Vec<u32>, len: usize| {
        let l = ids.len();
        TokenBatch {
            ids: Tensor::from_vec(ids, (1, l), &dev).unwrap(),
            mask: pad_mask(&[real.len()], len),
            eos: Tensor::from_vec(
                (0..len).map(|i| (i == real.len() - 1) as u8 as f64).collect::<Vec<_>>(),
                (1, len),
                &dev,
            )
            .unwrap(),
        }
    };
    let padded_ids = |len: usize, fill: u32| {
        let mut v = real.to_vec();
        v.resize(len, fill);
        v
    };
    let base = text.forward(&batch(padded_ids(cfg.max_len, 0), cfg.max_len)).unwrap().sentence;
    let junk = text.forward(&batch(padded_ids(cfg.max_len, 33), cfg.max_len)).unwrap().sentence;
    let short = text.forward(&batch(padded_ids(8, 0), 8)).unwrap().sentence;
    let pad_err = max_abs(&(&base - junk).unwrap()).max(max_abs(&(&base - short).unwrap()));
    check(pad_err < 1e-10, format!("padding invariance of f_s ({pad_err:.1e})"));

    outcome(ok, notes.join("; "))
}

// 3 ------------------------------------------------------------------------

fn brute_iou(p: &[bool], t: &[bool]) -> f64 {
    let i = p.iter().zip(t).filter(|(a, b)| **a && **b).count();
    let u = p.iter().zip(t).filter(|(a, b)| **a || **b).count();
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

fn brute_boundary(m: &[bool], n: usize) -> Vec<bool> {
    let at = |r: i64, c: i64| r >= 0 && c >= 0 && r < n as i64 && c < n as i64 && m[(r * n as i64 + c) as usize];
    (0..n * n)
        .map(|k| {
            let (r, c) = ((k / n) as i64, (k % n) as i64);
            m[k] && [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
                .iter()
                .any(|(dr, dc)| !at(r + dr, c + dc))
        })
        .collect()
}

fn brute_boundary_f(p: &[bool], t: &[bool], n: usize) -> f64 {
    let (bp, bt) = (brute_boundary(p, n), brute_boundary(t, n));
    let near = |b: &[bool], k: usize| {
        let (r, c) = ((k / n) as i64, (k % n) as i64);
        (-1..=1).any(|dr| {
            (-1..=1).any(|dc| {
                let (y, x) = (r + dr, c + dc);
                y >= 0 && x >= 0 && y < n as i64 && x < n as i64 && b[(y * n as i64 + x) as usize]
            })
        })
    };
    let np = bp.iter().filter(|&&v| v).count();
    let nt = bt.iter().filter(|&&v| v).count();
    if np == 0 && nt == 0 {
        return 1.0;
    }
    if np == 0 || nt == 0 {
        return 0.0;
    }
    let mp = (0..n * n).filter(|&k| bp[k] && near(&bt, k)).count();
    let mt = (0..n * n).filter(|&k| bt[k] && near(&bp, k)).count();
    let (pr, rc) = (mp as f64 / np as f64, mt as f64 / nt as f64);
    if pr + rc == 0.0 {
        0.0
    } else {
        2.0 * pr * rc / (pr + rc)
    }
}

fn brute_f(prob: &[f32], t: &[bool]) -> f64 {
    let mean = prob.iter().map(|&p| p as f64).sum::<f64>() / prob.len() as f64;
    let thr = (2.0 * mean).min(1.0);
    let pred: Vec<bool> = prob.iter().map(|&p| p as f64 >= thr).collect();
    let tp = pred.iter().zip(t).filter(|(a, b)| **a && **b).count() as f64;
    let np = pred.iter().filter(|&&v| v).count() as f64;
    let nt = t.iter().filter(|&&v| v).count() as f64;
    if np == 0.0 || nt == 0.0 || tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / np, tp / nt);
    1.3 * p * r / (0.3 * p + r)
}

fn metric_oracles() -> Outcome {
    const N: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut pairs = Vec::new();
    for k in 0..1000 {
        // Vary density so empty and full masks both occur.
        let dp = [0.0, 0.1, 0.5, 0.9, 1.0][k % 5];
        let dt = [0.3, 0.0, 0.6, 1.0, 0.5][(k / 5) % 5];
        let p: Vec<bool> = (0..N * N).map(|_| rng.random_bool(dp)).collect();
        let t: Vec<bool> = (0..N * N).map(|_| rng.random_bool(dt)).collect();
        let prob: Vec<f32> = p.iter().map(|&v| if v { rng.random_range(0.5..1.0) } else { rng.random_range(0.0..0.5) }).collect();
        let (pm, tm) = (Mask::from_fn(N, N, |r, c| p[r * N + c]), Mask::from_fn(N, N, |r, c| t[r * N + c]));
        worst = worst.max((iou(&pm, &tm).unwrap() - brute_iou(&p, &t)).abs());
        worst = worst.max((boundary_f(&pm, &tm).unwrap() - brute_boundary_f(&p, &t, N)).abs());
        let pmap = ProbMap::new(N, N, prob.clone()).unwrap();
        worst = worst.max((f_measure(&pmap, &tm).unwrap() - brute_f(&prob, &t)).abs());
        pairs.push((p, t, pm, tm));
    }
    // Pooled metrics.
    let refs: Vec<(&Mask, &Mask)> = pairs.iter().map(|(_, _, a, b)| (a, b)).collect();
    let (mut i, mut u) = (0usize, 0usize);
    for (p, t, _, _) in &pairs {
        i += p.iter().zip(t).filter(|(a, b)| **a && **b).count();
        u += p.iter().zip(t).filter(|(a, b)| **a || **b).count();
    }
    worst = worst.max((oiou(&refs).unwrap() - i as f64 / u as f64).abs());
    let classes = ["a", "b", "c", "d", "e", "f", "g"];
    let items: Vec<(&str, &Mask, &Mask)> = pairs
        .iter()
        .enumerate()
        .map(|(k, (_, _, a, b))| (classes[k % 7], a, b))
        .collect();
    let mut per_class = 0.0;
    for (ci, _) in classes.iter().enumerate() {
        let (mut i, mut u) = (0usize, 0usize);
        for (p, t, _, _) in pairs.iter().skip(ci).step_by(7) {
            i += p.iter().zip(t).filter(|(a, b)| **a && **b).count();
            u += p.iter().zip(t).filter(|(a, b)| **a || **b).count();
        }
        per_class += if u == 0 { 1.0 } else { i as f64 / u as f64 };
    }
    worst = worst.max((miou(&items).unwrap() - per_class / 7.0).abs());
    for clip in pairs.chunks(10) {
        let preds: Vec<Mask> = clip.iter().map(|c| c.2.clone()).collect();
        let targets: Vec<Mask> = clip.iter().map(|c| c.3.clone()).collect();
        let r = j_and_f(&preds, &targets).unwrap();
        let j = clip.iter().map(|c| brute_iou(&c.0, &c.1)).sum::<f64>() / clip.len() as f64;
        let f = clip.iter().map(|c| brute_boundary_f(&c.0, &c.1, N)).sum::<f64>() / clip.len() as f64;
        worst = worst.max((r.j - j).abs()).max((r.f - f).abs()).max((r.jf - (j + f) / 2.0).abs());
    }
    outcome(worst <= 1e-12, format!("1000 pairs, max deviation {worst:.1e}"))
}

// 4 ------------------------------------------------------------------------

const OVERFIT_TASKS: [Task; 5] = [Task::Ss, Task::Ovs, Task::Ris, Task::Sod, Task::Ps];
const OVERFIT_PASSES: usize = 8;

fn mean_iou(model: &SegModel, data: &[Triplet]) -> f64 {
    data.iter()
        .map(|t| {
            let pred = model.segment(&t.image, &t.caption).unwrap().binarize(MASK_THRESHOLD);
            iou(&pred, &t.mask).unwrap()
        })
        .sum::<f64>()
        / data.len() as f64
}

fn overfit() -> Outcome {
    let corpus = |seed| {
        build_corpus(&CorpusSpec {
            seed,
            count: 64,
            scene: SceneConfig::default(),
            tasks: OVERFIT_TASKS.to_vec(),
        })
        .unwrap()
    };
    let (train, held_out) = (corpus(1000), corpus(90_000));
    let mut cfg = make_schedule(2).unwrap();
    cfg.passes_per_epoch = OVERFIT_PASSES;
    let model = SegModel::new(&ModelConfig::desk(), 0, DType::F32, &Device::Cpu).unwrap();
    let mut trainer = Trainer::new(model, cfg);
    trainer.fit(&train).unwrap();
    let (a, b) = (mean_iou(&trainer.model, &train), mean_iou(&trainer.model, &held_out));
    outcome(
        trainer.step <= 2000 && a >= 0.90 && b >= 0.75,
        format!("{} steps, train mean IoU {a:.3} (need 0.90), held-out {b:.3} (need 0.75)", trainer.step),
    )
}

// 5 ------------------------------------------------------------------------

fn prompt_fidelity() -> Outcome {
    let names = ["cat", "traffic light", "person's left arm", "circle border", "x"];
    let mut bad = Vec::new();
    let mut cases = 0;
    for task in Task::ALL {
        for name in names {
            cases += 1;
            let want = match task {
                Task::Ss | Task::Ovs | Task::Ps => Some(format!("all {name}")),
                Task::Ris | Task::Rvos => Some(name.to_string()),
                Task::Sod => None,
            };
            let got = render_prompt(task, Some(name)).ok();
            if got != want {
                bad.push(format!("{task:?}({name}) = {got:?}"));
            }
        }
        cases += 1;
        let bare = render_prompt(task, None).ok();
        let want = (task == Task::Sod).then(|| "the most salient object".to_string());
        if bare != want {
            bad.push(format!("{task:?}() = {bare:?}"));
        }
    }
    outcome(bad.is_empty(), format!("{cases} cases{}", if bad.is_empty() { String::new() } else { format!(", wrong: {}", bad.join("; ")) }))
}

// 6 ------------------------------------------------------------------------

fn pipeline_efficacy() -> Outcome {
    let noise = Noise {
        mask_prob: 0.2,
        caption_swap_prob: 0.0,
        ..Noise::level(0.2)
    };
    let stages = OracleStages::noisy(noise, 77).stage_set();
    let (mut before, mut after) = (Vec::new(), Vec::new());
    let mut corrupted = 0usize;
    for i in 0..500u64 {
        let scene = generate_scene(50_000 + i, &SceneConfig::default()).unwrap();
        let insts = instances(&scene);
        let image = Arc::new(render_image(&scene));
        let boxes: Vec<_> = insts.iter().map(|t| t.bbox).collect();
        let batch = run_box_route(&image, &boxes, &stages).unwrap();
        let truth = |m: &Mask| {
            insts
                .iter()
                .map(|t| iou(m, &t.mask).unwrap())
                .fold(0.0, f64::max)
        };
        for t in &batch.triplets {
            let v = truth(&t.mask);
            corrupted += (v < 0.9) as usize;
            before.push(v);
        }
        let kept = filter_triplets(&batch, stages.scorer.as_ref(), 0.5).unwrap();
        after.extend(kept.triplets.iter().map(|t| truth(&t.mask)));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (mb, ma) = (mean(&before), mean(&after));
    let gain = ma - mb;

    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let img = RgbImage::new(64, 64);
    let (mut hidden, mut draws) = (0usize, 0usize);
    while draws < 10_000 {
        let h = hide_and_seek(&img, HIDE_PATCH, HIDE_PROB, [0, 0, 0], &mut rng).unwrap();
        hidden += h.hidden;
        draws += h.patches;
    }
    let frac = hidden as f64 / draws as f64;
    outcome(
        gain >= 0.05 && (0.19..=0.21).contains(&frac),
        format!(
            "{} pseudo masks ({} corrupted), mean IoU {mb:.3} -> {ma:.3} after filtering ({} kept), gain {gain:.3}; hidden fraction {frac:.4} over {draws} patches",
            before.len(),
            corrupted,
            after.len()
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn schedule_fidelity() -> Outcome {
    let s1 = make_schedule(1).unwrap();
    let s2 = make_schedule(2).unwrap();
    let ok1 = s1.learning_rate == 5e-5 && s1.epochs == 5;
    let ok2 = s2.learning_rate == 1e-4
        && s2.epochs == 15
        && s2.lr_decay == Some(LrDecay { epoch: 10, factor: 0.1 })
        && s2.backbone_lr_factor == 0.1
        && s2.lr_at(9) == 1e-4
        && s2.lr_at(10) == 1e-4 * 0.1;
    let ok3 = MASK_THRESHOLD == 0.5 && make_schedule(3).is_err();
    outcome(
        ok1 && ok2 && ok3,
        format!(
            "stage 1 lr {} x {} epochs; stage 2 lr {} x {} epochs, decay {:?}, backbone x{}; threshold {}",
            s1.learning_rate, s1.epochs, s2.learning_rate, s2.epochs, s2.lr_decay, s2.backbone_lr_factor, MASK_THRESHOLD
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn determinism() -> Outcome {
    let spec = CorpusSpec {
        seed: 42,
        count: 30,
        scene: SceneConfig::default(),
        tasks: Task::ALL.to_vec(),
    };
    let dir = tempfile::tempdir().unwrap();
    let digests: Vec<(String, Vec<u8>)> = (0..2)
        .map(|i| {
            let corpus = build_corpus(&spec).unwrap();
            let path = dir.path().join(format!("run{i}")).join("manifest.jsonl");
            write_manifest(&corpus, &path).unwrap();
            (corpus_digest(&corpus), std::fs::read(&path).unwrap())
        })
        .collect();
    let corpus_same = digests[0] == digests[1];

    let mut data = build_corpus(&CorpusSpec {
        seed: 7,
        count: 6,
        scene: SceneConfig::square(32),
        tasks: vec![Task::Ris, Task::Ss, Task::Sod],
    })
    .unwrap();
    for t in data.iter_mut().step_by(2) {
        t.source = Source::PseudoBox;
        t.score = Some(0.9);
    }
    let run = || {
        let mut cfg = make_schedule(2).unwrap();
        cfg.epochs = 2;
        cfg.batch_size = 2;
        cfg.seed = 5;
        let model = SegModel::new(&ModelConfig::tiny(), 5, DType::F32, &Device::Cpu).unwrap();
        let mut trainer = Trainer::new(model, cfg);
        trainer.fit(&data).unwrap();
        trainer.curve.iter().map(|v| v.total.to_bits()).collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    outcome(
        corpus_same && a == b && !a.is_empty(),
        format!(
            "corpus digest {} ({}); loss curves of {} steps {}",
            &digests[0].0[..16],
            if corpus_same { "identical" } else { "DIFFERENT" },
            a.len(),
            if a == b { "identical" } else { "DIFFERENT" }
        ),
    )
}

fn main() {
    let checks: [(u32, &str, fn() -> Outcome, Duration); 8] = [
        (1, "gradient check", gradient_check, Duration::from_secs(300)),
        (2, "architecture invariants", architecture_invariants, Duration::MAX),
        (3, "metric oracles", metric_oracles, Duration::from_secs(60)),
        (4, "synthetic overfit", overfit, Duration::from_secs(30 * 60)),
        (5, "prompt fidelity", prompt_fidelity, Duration::MAX),
        (6, "pipeline efficacy", pipeline_efficacy, Duration::MAX),
        (7, "schedule fidelity", schedule_fidelity, Duration::MAX),
        (8, "determinism", determinism, Duration::MAX),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, name, check, budget) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let took = t0.elapsed();
        let in_time = took <= budget;
        let ok = result.ok && in_time;
        failed += (!ok) as usize;
        println!(
            "{} [{n}] {name}: {} [{:.1}s{}]",
            if ok { "PASS" } else { "FAIL" },
            result.detail,
            took.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
