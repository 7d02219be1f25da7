//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `DRIVEFIX_ACCEPT_ONLY=1,4,7` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use drivefix_core::corpus::{Corpus, CorpusConfig};
use drivefix_core::dataset::{read_sequence, validate_layout, SequenceMeta};
use drivefix_core::degrade::*;
use drivefix_core::evalkit::*;
use drivefix_core::objectives::{loss_and_grad, AlignmentWeights, NoiseDraw, TrainBatch};
use drivefix_core::presets::Preset;
use drivefix_core::restorer::*;
use drivefix_core::rng;
use drivefix_core::stdt::checkpoint::save_checkpoint;
use drivefix_core::stdt::*;
use drivefix_core::synthworld::*;
use drivefix_core::trainer::*;
use ndarray::{Array2, Array3, Array6, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- helpers

fn randomize<R: Real>(model: &mut Denoiser<R>, seed: u64, scale: f64) {
    let mut r = rng::stream(seed, "randomize");
    for (name, mut t) in model.tensors_mut() {
        let gamma = name.ends_with("gamma");
        t.mapv_inplace(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            R::lit(if gamma { 1.0 + 0.2 * z } else { scale * z })
        });
    }
}

fn randn6<R: Real>(shape: (usize, usize, usize, usize, usize, usize), r: &mut impl Rng) -> Array6<R> {
    Array6::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(r);
        R::lit(z)
    })
}

fn model_input<R: Real>(cfg: &ModelConfig, b: usize, v: usize, t: usize, hw: usize, seed: u64) -> DenoiserInput<R> {
    let mut r = rng::stream(seed, "input");
    let history = (cfg.history > 0).then(|| HistoryInput {
        frames: randn6((b, v, cfg.history, hw, hw, 3), &mut r),
        guidance: randn6((b, v, cfg.history, hw, hw, GUIDANCE_CHANNELS), &mut r),
    });
    DenoiserInput {
        noisy: randn6((b, v, t, hw, hw, 3), &mut r),
        corrupted: randn6((b, v, t, hw, hw, 3), &mut r),
        guidance: randn6((b, v, t, hw, hw, GUIDANCE_CHANNELS), &mut r),
        history,
        geometry: Array3::from_shape_simple_fn((b, v, GEOMETRY_DIM), || R::lit(r.random::<f64>() - 0.5)),
        tau: (0..b).map(|_| r.random::<f64>()).collect(),
        time_index: (0..t).map(|i| i as f64).collect(),
    }
}

fn grid(dims: [usize; 4], c: usize, seed: u64) -> LatentGrid<f64> {
    let mut r = rng::stream(seed, "grid");
    let rows = dims.iter().product();
    let data = Array2::from_shape_simple_fn((rows, c), || StandardNormal.sample(&mut r));
    LatentGrid::new(data, dims).unwrap()
}

fn random_block(c: usize, heads: usize, seed: u64) -> InterleavedBlock<f64> {
    let mut r = rng::stream(seed, "block");
    let mut b = InterleavedBlock::new(c, heads, &mut r);
    for w in [&mut b.temporal.wo.w, &mut b.spatial.wo.w, &mut b.fc2.w] {
        w.mapv_inplace(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            0.3 * z
        });
    }
    b
}

fn max_rel6(a: &Array6<f64>, b: &Array6<f64>) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn max_rel2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

// ------------------------------------------------------------- criteria

fn c1_block_contract() -> Check {
    let mut r = rng::stream(1, "c1");
    let mut cases = 0;
    for _ in 0..40 {
        let (b, v, t, n) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4), r.random_range(1..6));
        let heads = r.random_range(1..4);
        let h = r.random_range(0..3);
        let c = 4 * heads;
        let seed = r.random::<u64>();
        let block = random_block(c, heads, seed);
        let x = grid([b, v, t, n], c, seed);
        let hist = grid([b, v, h, n].map(|d| d.max(1)), c, seed ^ 1);
        let hist = (h > 0).then_some(&hist.data);
        let (y, _, _) = block.forward(&x, hist, BlockSwitches::default());
        if y.dims() != x.dims() || y.layout != Layout::Canonical || y.data.dim() != x.data.dim() {
            return Err(format!("shape changed for {:?}", [b, v, t, n, c]));
        }
        let back = x.to_layout(Layout::Spatial).to_layout(Layout::Canonical);
        if back != x {
            return Err(format!("round trip not bit-exact for {:?}", [b, v, t, n]));
        }
        cases += 1;
    }
    let cfg = ModelConfig {
        channels: 32,
        blocks: 3,
        heads: 4,
        patch: 4,
        ..ModelConfig::default()
    };
    let model = Denoiser::<f64>::new(&cfg).unwrap();
    let x = grid([2, 3, 2, 4], 32, 1);
    let hist = grid([2, 3, 2, 4], 32, 2).data;
    let mut y = x.clone();
    for block in &model.blocks {
        y = block.forward(&y, Some(&hist), BlockSwitches::default()).0;
    }
    ensure(y == x, format!("{cases} random grids keep shape, round trips bit-exact, zero-init stack identity: {}", y == x))
}

fn gradient_check(weights: AlignmentWeights) -> (f64, String) {
    let cfg = ModelConfig {
        channels: 16,
        blocks: 2,
        heads: 2,
        patch: 2,
        geo_channels: 8,
        seed: 5,
        ..ModelConfig::default()
    };
    let mut model = Denoiser::<f64>::new(&cfg).unwrap();
    randomize(&mut model, 21, 0.25);
    let inp = model_input::<f64>(&cfg, 2, 2, 1, 4, 3);
    let mut r = rng::stream(3, "batch");
    let rows = 2 * 2 * 4;
    let batch = TrainBatch {
        x0: randn6((2, 2, 1, 4, 4, 3), &mut r),
        corrupted: inp.corrupted,
        guidance: inp.guidance,
        history: inp.history,
        geometry: inp.geometry,
        teacher: Array2::from_shape_simple_fn((rows, cfg.geo_channels), || StandardNormal.sample(&mut r)),
        teacher_mask: (0..rows).map(|i| i % 5 != 0).collect(),
    };
    let noise = NoiseDraw::sample(&mut r, (2, 2, 1, 4, 4, 3));
    let (_, grads) = loss_and_grad(&model, &batch, &noise, weights).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, t)| t.iter().copied().collect()).collect();
    let names: Vec<(String, usize)> = model.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let mut pick = rng::stream(0, "fd-pick");
    let mut worst = (0.0f64, String::new());
    for (ti, (name, len)) in names.iter().enumerate() {
        let idxs: Vec<usize> = if *len <= 16 {
            (0..*len).collect()
        } else {
            (0..16).map(|_| pick.random_range(0..*len)).collect()
        };
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for &i in &idxs {
            let eval = |delta: f64| {
                let mut m = model.clone();
                {
                    let mut ts = m.tensors_mut();
                    *ts[ti].1.iter_mut().nth(i).unwrap() += delta;
                }
                loss_and_grad(&m, &batch, &noise, weights).unwrap().0.total
            };
            let h = 1e-5;
            num.push((eval(h) - eval(-h)) / (2.0 * h));
            ana.push(analytic[ti][i]);
        }
        let diff = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = norm(&num).max(norm(&ana));
        let rel = if scale < 1e-8 { 0.0 } else { diff / scale };
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    worst
}

fn c2_gradients() -> Check {
    let (d, dn) = gradient_check(AlignmentWeights::OFF);
    let (t, tn) = gradient_check(AlignmentWeights::default());
    ensure(
        d <= 1e-4 && t <= 1e-4,
        format!("worst relative error diffusion {d:.2e} ({dn}), total {t:.2e} ({tn}); tolerance 1e-4, step 1e-5, f64, C=16 L=2"),
    )
}

fn c3_equivariance() -> Check {
    let cfg = ModelConfig {
        channels: 16,
        blocks: 2,
        heads: 2,
        patch: 2,
        geo_channels: 8,
        seed: 5,
        t_cur: 3,
        ..ModelConfig::default()
    };
    let mut model = Denoiser::<f64>::new(&cfg).unwrap();
    randomize(&mut model, 3, 0.3);

    let inp = model_input::<f64>(&cfg, 2, 3, 3, 4, 9);
    let out = model.forward(&inp).unwrap();
    let perm = [1usize, 2, 0];
    let pv = |a: &Array6<f64>| a.select(Axis(1), &perm);
    let mut moved = inp.clone();
    moved.noisy = pv(&inp.noisy);
    moved.corrupted = pv(&inp.corrupted);
    moved.guidance = pv(&inp.guidance);
    let h = inp.history.as_ref().unwrap();
    moved.history = Some(HistoryInput {
        frames: pv(&h.frames),
        guidance: pv(&h.guidance),
    });
    moved.geometry = inp.geometry.select(Axis(1), &perm);
    let view_err = max_rel6(&pv(&out), &model.forward(&moved).unwrap());

    let pt = |a: &Array6<f64>| a.select(Axis(2), &perm);
    let mut moved = inp.clone();
    moved.noisy = pt(&inp.noisy);
    moved.corrupted = pt(&inp.corrupted);
    moved.guidance = pt(&inp.guidance);
    moved.time_index = perm.iter().map(|&i| inp.time_index[i]).collect();
    let time_err = max_rel6(&pt(&out), &model.forward(&moved).unwrap());

    // Block level: spatial over views, temporal over time.
    let block = random_block(16, 4, 9);
    let x = grid([2, 3, 3, 4], 16, 10);
    let rows_v = |g: &LatentGrid<f64>| {
        let mut rows = Vec::new();
        for b in 0..2 {
            for &v in &perm {
                let base = (b * 3 + v) * 3 * 4;
                rows.extend(base..base + 12);
            }
        }
        LatentGrid {
            data: g.data.select(Axis(0), &rows),
            ..g.clone()
        }
    };
    let sp_err = max_rel2(&rows_v(&block.spatial_step(&x).0).data, &block.spatial_step(&rows_v(&x)).0.data);
    let rows_t = |g: &LatentGrid<f64>| {
        let mut rows = Vec::new();
        for bv in 0..6 {
            for &t in &perm {
                let base = (bv * 3 + t) * 4;
                rows.extend(base..base + 4);
            }
        }
        LatentGrid {
            data: g.data.select(Axis(0), &rows),
            ..g.clone()
        }
    };
    let hist = grid([2, 3, 2, 4], 16, 6).data;
    let tp_err = max_rel2(
        &rows_t(&block.temporal_step(&x, Some(&hist)).0).data,
        &block.temporal_step(&rows_t(&x), Some(&hist)).0.data,
    );
    let worst = view_err.max(time_err).max(sp_err).max(tp_err);
    ensure(
        worst <= 1e-5,
        format!("relative error view {view_err:.1e}, time {time_err:.1e}, spatial block {sp_err:.1e}, temporal block {tp_err:.1e}; tolerance 1e-5"),
    )
}

fn c4_triplets() -> Check {
    let cfg = SceneConfig {
        timesteps: 24,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg, 3).unwrap();
    let rig = CameraRig::preset(RigPreset::Frontal3, 16, 16, ego_trajectory(&cfg));
    let gt = render_views(&scene, &rig, (16, 16)).unwrap();
    let (dg, _) = corrupt_sequence(&scene, &gt, &CorruptionSpec::default(), 1).unwrap();
    let triplets = build_triplets("scene_0000", &gt, &dg, 2).unwrap();
    let mut counts = std::collections::BTreeMap::new();
    for t in &triplets {
        *counts.entry(t.combo_id).or_insert(0usize) += 1;
    }
    ensure(
        triplets.len() == 88 && counts.len() == 4 && counts.values().all(|&c| c == 22),
        format!("{} triplets, per combo {:?}; expected 88 and 4×22", triplets.len(), counts),
    )
}

fn c5_optimizer() -> Check {
    let peak = 5e-5;
    let warm = 500;
    let lr0 = lr_schedule(0, peak, warm);
    let lr_half = lr_schedule(warm / 2, peak, warm);
    let after: Vec<f64> = [warm, warm + 1, 10 * warm].iter().map(|&s| lr_schedule(s, peak, warm)).collect();
    let sched = lr0 == 0.0 && lr_half == peak / 2.0 && after.iter().all(|&x| x == 5e-5);
    let hp = TrainConfig::full_scale().adamw();
    let mut opt = AdamW::new(hp, &[vec![1]]);
    let mut p = ArrayD::from_elem(IxDyn(&[1]), 0.7f64);
    let (mut theta, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
    let mut worst = 0.0f64;
    for k in 1..=10u64 {
        let g = (k as f64 * 0.37).sin() + 0.1 * theta;
        let lr = lr_schedule(k, 1e-2, 4);
        let grad = ArrayD::from_elem(IxDyn(&[1]), g);
        opt.step(vec![("p".into(), p.view_mut())], vec![("p".into(), grad.view())], lr);
        theta -= lr * hp.weight_decay * theta;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(k as i32));
        let vh = v / (1.0 - 0.999f64.powi(k as i32));
        theta -= lr * mh / (vh.sqrt() + hp.eps);
        worst = worst.max((p[[0]] - theta).abs());
    }
    ensure(
        sched && hp.beta1 == 0.9 && hp.beta2 == 0.999 && worst <= 1e-12,
        format!("lr(0)={lr0}, lr(w/2)={lr_half:e}, lr(≥w)={after:?}; 10-step scalar AdamW max deviation {worst:.1e} (tolerance 1e-12)"),
    )
}

fn c6_identities() -> Check {
    let cfg = SceneConfig {
        timesteps: 8,
        ..SceneConfig::default()
    };
    let mut ok = 0;
    for seed in 0..4u64 {
        let scene = generate_scene(&cfg, seed).unwrap();
        let rig = CameraRig::preset(RigPreset::Frontal3, 24, 24, ego_trajectory(&cfg));
        let seq = render_views(&scene, &rig, (24, 24)).unwrap();
        let id = CorruptionSpec::identity();
        let (r, _) = jitter_extrinsics(&rig, &id.jitter, &mut rng::stream(seed, "j"));
        let (t, _) = degrade_temporal(&seq, &id.temporal, &mut rng::stream(seed, "t")).unwrap();
        let (c, _) = degrade_radiometric(&seq, &id.radiometric, &mut rng::stream(seed, "r")).unwrap();
        let (all, _) = corrupt_sequence(&scene, &seq, &id, seed).unwrap();
        if r == rig && t == seq && c == seq && all == seq {
            ok += 1;
        }
    }
    ensure(ok == 4, format!("{ok}/4 scenes bit-exact through jitter, temporal, radiometric and the full pipeline"))
}

/// Held-out evaluation corpus of the end-to-end criterion.
fn e2e_eval_corpus() -> CorpusConfig {
    CorpusConfig {
        scenes: 4,
        first_scene: 1000,
        ..Preset::Desk.config().corpus
    }
}

struct E2e {
    corrupted: MetricReport,
    restored: MetricReport,
    sweep: SweepReport,
}

fn run_e2e() -> E2e {
    let desk = Preset::Desk.config();
    let spec = CorruptionSpec::default();
    let train = Corpus::generate(&desk.corpus, &spec).unwrap();
    let eval = Corpus::generate(&e2e_eval_corpus(), &spec).unwrap();
    let mut trainer = Trainer::new(&train, &desk.model, &desk.train, None).unwrap();
    let mut state = trainer.init_state().unwrap();
    let start = Instant::now();
    trainer.stage1(&mut state).unwrap();
    eprintln!("stage 1 finished in {:.0}s", start.elapsed().as_secs_f64());
    let restore = RestoreConfig {
        history: desk.model.history,
        chunk: desk.model.t_cur,
        ..desk.restore.clone()
    };
    let s2 = desk.train.stage2_steps;
    let marks: Vec<u64> = (1..=4).map(|i| s2 * i / 4).collect();
    let sweep = sweep_stage2(&mut trainer, &mut state, desk.train.alignment, &marks, &eval, &restore).unwrap();
    let restored = evaluate_model("restored", &state.model, &eval, &restore).unwrap();
    E2e {
        corrupted: evaluate_corrupted(&eval),
        restored,
        sweep,
    }
}

fn c7_end_to_end(e: &E2e) -> Check {
    let (c, r) = (&e.corrupted.aggregate, &e.restored.aggregate);
    let gain = r.psnr - c.psnr;
    let (cf, rf) = (c.flicker.unwrap_or(f64::NAN), r.flicker.unwrap_or(f64::NAN));
    let (cx, rx) = (c.cross_view.unwrap_or(f64::NAN), r.cross_view.unwrap_or(f64::NAN));
    let desk = Preset::Desk.config();
    ensure(
        gain >= 2.0 && rf < cf && rx < cx && desk.train.alignment == AlignmentWeights { alpha: 0.5, beta: 0.05 },
        format!(
            "4 held-out scenes 64×64 K=3 T=24, {}+{} steps: PSNR {:.2} → {:.2} dB (gain {gain:.2}, need ≥ 2.0); flicker {cf:.4} → {rf:.4}; cross-view {cx:.4} → {rx:.4}",
            desk.train.stage1_steps, desk.train.stage2_steps, c.psnr, r.psnr
        ),
    )
}

fn c8_ablation() -> Check {
    let cfg = AblationConfig::small();
    let table = run_ablation_grid(&cfg, None).map_err(|e| e.to_string())?;
    let summary: Vec<String> = table
        .checks
        .iter()
        .map(|c| format!("{} {}/{}", c.name, c.wins, c.seeds))
        .collect();
    ensure(
        table.checks.iter().all(|c| c.pass) && cfg.seeds.len() == 3,
        format!("{} seeds, need ≥ 2/3 per check: {}", cfg.seeds.len(), summary.join("; ")),
    )
}

fn c9_sweep(e: &E2e) -> Check {
    let dir = tempfile::tempdir().unwrap();
    emit_report(dir.path(), &[e.corrupted.clone(), e.restored.clone()], Some(&e.sweep), None).map_err(|x| x.to_string())?;
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let have_cols = ["step", "psnr", "ssim", "flicker", "best"].iter().all(|c| col(c).is_some());
    let best_col = col("best").unwrap_or(0);
    let flagged: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[best_col] == "true").collect();
    let best = e.sweep.best_point().map(|p| p.step);
    let svg = dir.path().join("sweep.svg").is_file();
    ensure(
        have_cols && rows.len() >= 4 && flagged.len() == 1 && svg,
        format!(
            "{} marks {:?} with PSNR/SSIM/flicker, best flagged at step {:?}, plot written: {svg}",
            rows.len(),
            e.sweep.points.iter().map(|p| p.step).collect::<Vec<_>>(),
            best
        ),
    )
}

fn c10_restorer() -> Check {
    let tiny = Preset::Tiny.config();
    let corpus = Corpus::generate(&tiny.corpus, &CorruptionSpec::default()).unwrap();
    let s = &corpus.scenes[0];
    let mut model = Denoiser::<f32>::new(&tiny.model).unwrap();
    randomize(&mut model, 7, 0.1);
    let input = SequenceInput {
        corrupted: &s.degraded,
        guidance: &s.degraded,
        far_plane: s.far_plane,
    };
    let cfg = RestoreConfig {
        steps: 3,
        seed: 4,
        ..RestoreConfig::for_model(&model)
    };
    let a = restore_sequence(&model, &input, &cfg).unwrap();
    let b = restore_sequence(&model, &input, &cfg).unwrap();
    let deterministic = a.frames == b.frames;

    let views: Vec<usize> = (0..s.degraded.num_views()).collect();
    let tampered = restore_sequence_with(&model, &input, &cfg, &views, &mut |t0, frames| {
        if t0 == 2 {
            for f in frames[0].iter_mut() {
                f.fill(0.0);
            }
        }
    })
    .unwrap();
    let causal = (0..2).all(|t| tampered[t] == a.frames[t]) && tampered[3] != a.frames[3];

    let dir = tempfile::tempdir().unwrap();
    let ckpt = save_checkpoint(&dir.path().join("ckpt"), &model, 0, "", serde_json::Value::Null).unwrap();
    let meta = SequenceMeta::for_sequence(&s.degraded, &s.id, 0, &s.scene.config);
    let prov = RestoreProvenance {
        checkpoint_digest: ckpt.digest(),
        restore_config: cfg.clone(),
        source: s.id.clone(),
    };
    let out = dir.path().join("pseudo");
    emit_pseudo_gt(&a, &meta, &out, &prov).unwrap();
    let valid = validate_layout(&out).is_ok();
    let (back, back_meta) = read_sequence(&out).unwrap();
    let worst = back
        .frames
        .iter()
        .flatten()
        .zip(a.frames.iter().flatten())
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0f32, f32::max);
    let provenance = back_meta.provenance["checkpoint_digest"] == ckpt.digest();
    ensure(
        deterministic && causal && valid && worst <= 1.0 / 255.0 && provenance,
        format!(
            "deterministic {deterministic}, perturbing t=2 leaves t<2 unchanged and moves t=3: {causal}, pseudo-GT valid {valid}, round-trip error {worst:.2e} (≤ 1/255), provenance {provenance}"
        ),
    )
}

// ------------------------------------------------------------------ main

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("DRIVEFIX_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    // `cargo test -- --list` and filters address the libtest harness; this
    // binary only honours the environment selection above.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(usize, &str, Check, f64)> = Vec::new();
    let mut run = |i: usize, name: &'static str, f: &mut dyn FnMut() -> Check| {
        if !wanted(i) {
            return;
        }
        let start = Instant::now();
        let r = guarded(f);
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {i:>2} {name}: {detail} ({secs:.1}s)");
        results.push((i, name, r, secs));
    };
    run(1, "block contract", &mut c1_block_contract);
    run(2, "gradient correctness", &mut c2_gradients);
    run(3, "equivariance", &mut c3_equivariance);
    run(4, "triplet construction", &mut c4_triplets);
    run(5, "optimizer and schedule", &mut c5_optimizer);
    run(6, "corruption identities", &mut c6_identities);
    let e2e = if wanted(7) || wanted(9) {
        catch_unwind(run_e2e).ok()
    } else {
        None
    };
    let missing = || Err("end-to-end run failed".to_string());
    run(7, "end-to-end improvement", &mut || e2e.as_ref().map_or_else(missing, c7_end_to_end));
    run(8, "ablation directions", &mut c8_ablation);
    run(9, "sweep report", &mut || e2e.as_ref().map_or_else(missing, c9_sweep));
    run(10, "restore contract", &mut c10_restorer);
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
