use drivefix_core::objectives::{loss_and_grad, AlignmentWeights, NoiseDraw, TrainBatch};
use drivefix_core::rng;
use drivefix_core::stdt::checkpoint::{load_checkpoint, save_checkpoint};
use drivefix_core::stdt::nn::Attention;
use drivefix_core::stdt::*;
use ndarray::{s, Array2, Array3, Array6, Axis};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        channels: 16,
        blocks: 2,
        heads: 2,
        patch: 2,
        history: 2,
        t_cur: 1,
        geo_channels: 8,
        seed: 5,
        ..ModelConfig::default()
    }
}

/// Overwrite every parameter (including zero-initialised projections) with
/// random values so no gradient path is trivially zero.
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

fn input<R: Real>(cfg: &ModelConfig, b: usize, v: usize, t: usize, hw: usize, seed: u64) -> DenoiserInput<R> {
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

fn max_rel(a: &Array6<f64>, b: &Array6<f64>) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
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
    let mut fill = |m: &mut Array2<f64>| m.mapv_inplace(|_| { let z: f64 = StandardNormal.sample(&mut r); 0.3 * z });
    fill(&mut b.temporal.wo.w);
    fill(&mut b.spatial.wo.w);
    fill(&mut b.fc2.w);
    b
}

#[test]
fn zero_initialised_stack_is_identity() {
    let cfg = ModelConfig { channels: 32, blocks: 3, heads: 4, patch: 4, ..ModelConfig::default() };
    let model = Denoiser::<f64>::new(&cfg).unwrap();
    let x = grid([2, 3, 2, 4], 32, 1);
    let hist = grid([2, 3, 2, 4], 32, 2).data;
    let mut y = x.clone();
    for block in &model.blocks {
        y = block.forward(&y, Some(&hist), BlockSwitches::default()).0;
    }
    assert_eq!(y, x);
}

#[test]
fn single_token_without_history_is_identity_at_init() {
    let mut r = rng::stream(0, "t");
    let block = InterleavedBlock::<f64>::new(8, 2, &mut r);
    let x = grid([1, 1, 1, 1], 8, 3);
    let (y, _) = block.temporal_step(&x, None);
    assert_eq!(y, x);
}

#[test]
fn history_is_read_and_never_written() {
    let cfg = tiny_config();
    let mut model = Denoiser::<f64>::new(&cfg).unwrap();
    randomize(&mut model, 1, 0.3);
    let inp = input::<f64>(&cfg, 1, 2, 1, 4, 7);
    let (_, cache) = model.forward_train(&inp).unwrap();
    let hist = cache.history_tokens().unwrap().clone();
    // Re-encoding the history alone gives the very tokens every block consumed.
    let (_, cache2) = model.forward_train(&inp).unwrap();
    assert_eq!(cache2.history_tokens().unwrap(), &hist);

    let base = model.forward(&inp).unwrap();
    let mut moved = inp.clone();
    moved.history.as_mut().unwrap().frames[[0, 1, 0, 2, 3, 1]] += 1e-3;
    let out = model.forward(&moved).unwrap();
    assert!(base.iter().zip(out.iter()).any(|(a, b)| a != b));
}

#[test]
fn temporal_attention_is_time_permutation_equivariant() {
    let block = random_block(16, 2, 4);
    let x = grid([2, 2, 3, 5], 16, 5);
    let hist = grid([2, 2, 2, 5], 16, 6).data;
    let (y, _) = block.temporal_step(&x, Some(&hist));
    let perm = [2usize, 0, 1];
    let permute = |g: &LatentGrid<f64>| {
        let mut rows = Vec::new();
        for bv in 0..4 {
            for &t in &perm {
                let base = (bv * 3 + t) * 5;
                rows.extend(base..base + 5);
            }
        }
        LatentGrid { data: g.data.select(Axis(0), &rows), ..g.clone() }
    };
    let (yp, _) = block.temporal_step(&permute(&x), Some(&hist));
    let expect = permute(&y);
    let err = (&yp.data - &expect.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = expect.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err / scale <= 1e-5, "{err}");
}

#[test]
fn denoiser_is_time_permutation_equivariant() {
    let cfg = ModelConfig { t_cur: 3, ..tiny_config() };
    let mut model = Denoiser::<f64>::new(&cfg).unwrap();
    randomize(&mut model, 2, 0.3);
    let inp = input::<f64>(&cfg, 1, 2, 3, 4, 8);
    let out = model.forward(&inp).unwrap();
    let perm = [1usize, 2, 0];
    let p = |a: &Array6<f64>| a.select(Axis(2), &perm);
    let mut moved = inp.clone();
    moved.noisy = p(&inp.noisy);
    moved.corrupted = p(&inp.corrupted);
    moved.guidance = p(&inp.guidance);
    moved.time_index = perm.iter().map(|&i| inp.time_index[i]).collect();
    let out2 = model.forward(&moved).unwrap();
    assert!(max_rel(&p(&out), &out2) <= 1e-5);
}

#[test]
fn spatial_attention_is_view_permutation_equivariant() {
    let block = random_block(16, 4, 9);
    let x = grid([2, 3, 2, 4], 16, 10);
    let perm = [2usize, 0, 1];
    let permute = |g: &LatentGrid<f64>| {
        let mut rows = Vec::new();
        for b in 0..2 {
            for &v in &perm {
                let base = (b * 3 + v) * 2 * 4;
                rows.extend(base..base + 8);
            }
        }
        LatentGrid { data: g.data.select(Axis(0), &rows), ..g.clone() }
    };
    let (y, _) = block.spatial_step(&x);
    let (yp, _) = block.spatial_step(&permute(&x));
    let expect = permute(&y);
    let err = (&yp.data - &expect.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = expect.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err / scale <= 1e-5);
}

#[test]
fn denoiser_is_view_permutation_equivariant() {
    let cfg = tiny_config();
    let mut model = Denoiser::<f64>::new(&cfg).unwrap();
    randomize(&mut model, 3, 0.3);
    let inp = input::<f64>(&cfg, 2, 3, 1, 4, 9);
    let out = model.forward(&inp).unwrap();
    let perm = [1usize, 2, 0];
    let p = |a: &Array6<f64>| a.select(Axis(1), &perm);
    let mut moved = inp.clone();
    moved.noisy = p(&inp.noisy);
    moved.corrupted = p(&inp.corrupted);
    moved.guidance = p(&inp.guidance);
    let h = inp.history.as_ref().unwrap();
    moved.history = Some(HistoryInput { frames: p(&h.frames), guidance: p(&h.guidance) });
    moved.geometry = inp.geometry.select(Axis(1), &perm);
    let out2 = model.forward(&moved).unwrap();
    assert!(max_rel(&p(&out), &out2) <= 1e-5);
}

#[test]
fn single_view_spatial_is_plain_self_attention() {
    let block = random_block(8, 2, 11);
    let x = grid([1, 1, 1, 6], 8, 12);
    let (y, _) = block.spatial_step(&x);
    let (n, _) = block.ln2.forward(&x.data);
    let (a, _) = block.spatial.forward(&n, None, 1);
    assert_eq!(y.data, &x.data + &a);
}

#[test]
fn identical_views_with_equal_embeddings_give_identical_outputs() {
    let cfg = tiny_config();
    let mut model = Denoiser::<f64>::new(&cfg).unwrap();
    randomize(&mut model, 4, 0.3);
    let mut inp = input::<f64>(&cfg, 1, 3, 1, 4, 10);
    for v in 1..3 {
        let first = inp.noisy.slice(s![.., 0..1, .., .., .., ..]).to_owned();
        inp.noisy.slice_mut(s![.., v..v + 1, .., .., .., ..]).assign(&first);
        let c = inp.corrupted.slice(s![.., 0..1, .., .., .., ..]).to_owned();
        inp.corrupted.slice_mut(s![.., v..v + 1, .., .., .., ..]).assign(&c);
        let g = inp.guidance.slice(s![.., 0..1, .., .., .., ..]).to_owned();
        inp.guidance.slice_mut(s![.., v..v + 1, .., .., .., ..]).assign(&g);
        let h = inp.history.as_mut().unwrap();
        let hf = h.frames.slice(s![.., 0..1, .., .., .., ..]).to_owned();
        h.frames.slice_mut(s![.., v..v + 1, .., .., .., ..]).assign(&hf);
        let hg = h.guidance.slice(s![.., 0..1, .., .., .., ..]).to_owned();
        h.guidance.slice_mut(s![.., v..v + 1, .., .., .., ..]).assign(&hg);
        let geo = inp.geometry.slice(s![.., 0, ..]).to_owned();
        inp.geometry.slice_mut(s![.., v, ..]).assign(&geo);
    }
    let out = model.forward(&inp).unwrap();
    let v0 = out.slice(s![.., 0, .., .., .., ..]);
    for v in 1..3 {
        assert_eq!(out.slice(s![.., v, .., .., .., ..]), v0);
    }
}

#[test]
fn distinct_camera_poses_give_distinct_tokens() {
    let cfg = tiny_config();
    let model = Denoiser::<f64>::new(&cfg).unwrap();
    let mut inp = input::<f64>(&cfg, 1, 2, 1, 4, 11);
    let first = inp.noisy.slice(s![.., 0..1, .., .., .., ..]).to_owned();
    inp.noisy.slice_mut(s![.., 1..2, .., .., .., ..]).assign(&first);
    let emb = model.encoder.camera_embedding(&inp.geometry);
    assert!(emb.row(0) != emb.row(1));
    let pix = Array6::<f64>::zeros((1, 2, 1, 4, 4, PIXEL_CHANNELS));
    let (tokens, _) = model.encoder.forward(&pix.view(), 2, &inp.geometry, &[0.5], &[0.0]);
    assert!(tokens.slice(s![0..4, ..]) != tokens.slice(s![4..8, ..]));
}

#[test]
fn swapping_temporal_and_spatial_changes_output() {
    let block = random_block(16, 2, 13);
    let x = grid([1, 2, 2, 3], 16, 14);
    let hist = grid([1, 2, 1, 3], 16, 15).data;
    let (a, _) = block.temporal_step(&x, Some(&hist));
    let (ab, _) = block.spatial_step(&a);
    let (b, _) = block.spatial_step(&x);
    let (ba, _) = block.temporal_step(&b, Some(&hist));
    let diff = (&ab.data - &ba.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff > 1e-6);
}

#[test]
fn forward_is_deterministic_and_batch_independent() {
    let cfg = tiny_config();
    let mut model = Denoiser::<f32>::new(&cfg).unwrap();
    randomize(&mut model, 5, 0.3);
    let inp = input::<f32>(&cfg, 1, 2, 1, 4, 12);
    let a = model.forward(&inp).unwrap();
    assert_eq!(a, model.forward(&inp).unwrap());
    let doubled = DenoiserInput {
        noisy: stack_batch(&[inp.noisy.clone(), inp.noisy.clone()]),
        corrupted: stack_batch(&[inp.corrupted.clone(), inp.corrupted.clone()]),
        guidance: stack_batch(&[inp.guidance.clone(), inp.guidance.clone()]),
        history: inp.history.as_ref().map(|h| HistoryInput {
            frames: stack_batch(&[h.frames.clone(), h.frames.clone()]),
            guidance: stack_batch(&[h.guidance.clone(), h.guidance.clone()]),
        }),
        geometry: ndarray::concatenate(Axis(0), &[inp.geometry.view(), inp.geometry.view()]).unwrap(),
        tau: vec![inp.tau[0]; 2],
        time_index: inp.time_index.clone(),
    };
    let d = model.forward(&doubled).unwrap();
    assert_eq!(batch_slice(&d, 0), a);
    assert_eq!(batch_slice(&d, 1), a);

    let other = input::<f32>(&cfg, 1, 2, 1, 4, 13);
    let mixed = DenoiserInput {
        noisy: stack_batch(&[other.noisy.clone(), inp.noisy.clone()]),
        corrupted: stack_batch(&[other.corrupted.clone(), inp.corrupted.clone()]),
        guidance: stack_batch(&[other.guidance.clone(), inp.guidance.clone()]),
        history: Some(HistoryInput {
            frames: stack_batch(&[other.history.clone().unwrap().frames, inp.history.clone().unwrap().frames]),
            guidance: stack_batch(&[other.history.clone().unwrap().guidance, inp.history.clone().unwrap().guidance]),
        }),
        geometry: ndarray::concatenate(Axis(0), &[other.geometry.view(), inp.geometry.view()]).unwrap(),
        tau: vec![other.tau[0], inp.tau[0]],
        time_index: inp.time_index.clone(),
    };
    assert_eq!(batch_slice(&model.forward(&mixed).unwrap(), 1), a);
}

#[test]
fn non_finite_activation_names_block() {
    let cfg = tiny_config();
    let mut model = Denoiser::<f32>::new(&cfg).unwrap();
    model.blocks[1].fc1.w[[0, 0]] = f32::NAN;
    let err = model.forward(&input::<f32>(&cfg, 1, 2, 1, 4, 1)).unwrap_err();
    assert!(err.to_string().contains("block 1"), "{err}");
}

#[test]
fn shape_errors_name_the_dimension() {
    let cfg = tiny_config();
    let model = Denoiser::<f32>::new(&cfg).unwrap();
    let mut inp = input::<f32>(&cfg, 1, 2, 1, 4, 1);
    inp.guidance = Array6::zeros((1, 2, 1, 4, 4, 2));
    assert!(model.forward(&inp).unwrap_err().to_string().contains("guidance"));
    let mut inp = input::<f32>(&cfg, 1, 2, 1, 4, 1);
    let h = inp.history.as_mut().unwrap();
    h.frames = Array6::zeros((1, 3, 2, 4, 4, 3));
    assert!(model.forward(&inp).unwrap_err().to_string().contains("history views"));
    let inp = input::<f32>(&cfg, 1, 2, 1, 5, 1);
    assert!(model.forward(&inp).unwrap_err().to_string().contains("image size"));
}

#[test]
fn readout_shape_matches_frames() {
    let cfg = ModelConfig { patch: 8, channels: 16, heads: 2, blocks: 1, ..ModelConfig::default() };
    let model = Denoiser::<f32>::new(&cfg).unwrap();
    let inp = input::<f32>(&cfg, 1, 3, 1, 64, 1);
    let out = model.forward(&inp).unwrap();
    assert_eq!(out.shape(), &[1, 3, 1, 64, 64, 3]);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let mut model = Denoiser::<f32>::new(&cfg).unwrap();
    randomize(&mut model, 6, 0.3);
    save_checkpoint(&dir.path().join("a"), &model, 12, "abc", serde_json::json!({"k": 1})).unwrap();
    let (loaded, manifest) = load_checkpoint::<f32>(&dir.path().join("a")).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(manifest.step, 12);
    save_checkpoint(&dir.path().join("b"), &loaded, 12, "abc", serde_json::json!({"k": 1})).unwrap();
    for entry in walk(&dir.path().join("a")) {
        let rel = entry.strip_prefix(dir.path().join("a")).unwrap();
        let a = std::fs::read(&entry).unwrap();
        let b = std::fs::read(dir.path().join("b").join(rel)).unwrap();
        assert_eq!(a, b, "{}", rel.display());
    }
    assert!(load_checkpoint::<f64>(&dir.path().join("a")).is_err());

    // A manifest whose config disagrees with the stored tensors is rejected.
    let path = dir.path().join("a/manifest.json");
    let text = std::fs::read_to_string(&path).unwrap().replace("\"channels\": 16", "\"channels\": 20");
    std::fs::write(&path, text).unwrap();
    let err = load_checkpoint::<f32>(&dir.path().join("a")).unwrap_err();
    assert!(err.to_string().contains("shape mismatch"), "{err}");
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn batch_for(cfg: &ModelConfig, seed: u64) -> (TrainBatch<f64>, NoiseDraw<f64>) {
    let inp = input::<f64>(cfg, 2, 2, 1, 4, seed);
    let mut r = rng::stream(seed, "batch");
    let rows = 2 * 2 * 4;
    let teacher = Array2::from_shape_simple_fn((rows, cfg.geo_channels), || StandardNormal.sample(&mut r));
    let mask = (0..rows).map(|i| i % 5 != 0).collect();
    let batch = TrainBatch {
        x0: randn6((2, 2, 1, 4, 4, 3), &mut r),
        corrupted: inp.corrupted,
        guidance: inp.guidance,
        history: inp.history,
        geometry: inp.geometry,
        teacher,
        teacher_mask: mask,
    };
    let noise = NoiseDraw::sample(&mut r, (2, 2, 1, 4, 4, 3));
    (batch, noise)
}

/// Central differences with step 1e-5 on sampled entries of every tensor;
/// returns the worst per-tensor relative error.
fn gradient_check(weights: AlignmentWeights) -> (f64, String) {
    let cfg = tiny_config();
    let mut model = Denoiser::<f64>::new(&cfg).unwrap();
    randomize(&mut model, 21, 0.25);
    let (batch, noise) = batch_for(&cfg, 3);
    let (_, grads) = loss_and_grad(&model, &batch, &noise, weights).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();
    let mut pick = rng::stream(0, "fd-pick");
    let names: Vec<(String, usize)> = model.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let mut worst = (0.0f64, String::new());
    for (ti, (name, len)) in names.iter().enumerate() {
        let idxs: Vec<usize> = if *len <= 24 { (0..*len).collect() } else { (0..24).map(|_| pick.random_range(0..*len)).collect() };
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for &i in &idxs {
            let eval = |delta: f64| {
                let mut m = model.clone();
                {
                    let mut ts = m.tensors_mut();
                    let t = &mut ts[ti].1;
                    let v = t.iter_mut().nth(i).unwrap();
                    *v += delta;
                }
                loss_and_grad(&m, &batch, &noise, weights).unwrap().0.total
            };
            let h = 1e-5;
            num.push((eval(h) - eval(-h)) / (2.0 * h));
            ana.push(analytic[ti].1[i]);
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(ana.iter().map(|a| a * a).sum::<f64>().sqrt());
        // Groups with a vanishing true gradient (key biases: softmax is
        // invariant to a shift shared by all keys) are compared absolutely
        // against the finite-difference noise floor.
        let rel = if scale < 1e-8 { 0.0 } else { diff / scale };
        if name.ends_with(".k.b") {
            assert!(ana.iter().all(|a| a.abs() < 1e-12), "{name} should have zero gradient");
        }
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    worst
}

#[test]
fn diffusion_loss_gradients_match_finite_differences() {
    let (rel, name) = gradient_check(AlignmentWeights::OFF);
    assert!(rel <= 1e-4, "{name}: {rel}");
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    let (rel, name) = gradient_check(AlignmentWeights::default());
    assert!(rel <= 1e-4, "{name}: {rel}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn block_preserves_shape(b in 1usize..3, v in 1usize..4, t in 1usize..3, n in 1usize..5, heads in 1usize..3, h in 0usize..3, seed in any::<u64>()) {
        let c = 4 * heads;
        let block = random_block(c, heads, seed);
        let x = grid([b, v, t, n], c, seed);
        let hist = grid([b, v, h.max(1), n], c, seed ^ 1).data.slice(s![..b * v * h * n, ..]).to_owned();
        let (y, _, taps) = block.forward(&x, Some(&hist), BlockSwitches::default());
        prop_assert_eq!(y.dims(), x.dims());
        prop_assert_eq!(y.layout, Layout::Canonical);
        prop_assert_eq!(taps.after_spatial.dim(), x.data.dim());
    }

    #[test]
    fn rearrangement_round_trip(b in 1usize..4, v in 1usize..4, t in 1usize..4, n in 1usize..6, seed in any::<u64>()) {
        let x = grid([b, v, t, n], 3, seed);
        let sp = x.to_layout(Layout::Spatial);
        prop_assert_eq!(sp.groups(), (b * t, v * n));
        let back = sp.to_layout(Layout::Canonical);
        prop_assert_eq!(&back, &x);
        // Spatial rows of one (b, t) group are the (v, n) tokens at that time.
        let (bi, ti) = (b - 1, t - 1);
        for vi in 0..v {
            for ni in 0..n {
                let src = ((bi * v + vi) * t + ti) * n + ni;
                let dst = ((bi * t + ti) * v + vi) * n + ni;
                prop_assert_eq!(x.data.row(src), sp.data.row(dst));
            }
        }
    }
}

#[test]
fn attention_without_extra_matches_empty_extra() {
    let mut r = rng::stream(1, "a");
    let att = Attention::<f64>::new(8, 2, &mut r);
    let x = grid([1, 1, 1, 4], 8, 1).data;
    let empty = Array2::<f64>::zeros((0, 8));
    assert_eq!(att.forward(&x, None, 1).0, att.forward(&x, Some(&empty), 1).0);
}

#[test]
fn clean_estimate_at_unit_tau_ignores_the_noisy_input() {
    let cfg = tiny_config();
    let mut m = Denoiser::<f64>::new(&cfg).unwrap();
    randomize(&mut m, 4, 0.2);
    let mut a = input::<f64>(&cfg, 2, 2, 1, 4, 1);
    a.tau = vec![1.0; 2];
    let mut b = a.clone();
    let mut r = rng::stream(2, "other-noise");
    b.noisy = randn6(a.noisy.dim(), &mut r);
    // x̂₀ = x_τ − τ·v at τ = 1.
    let xa = &a.noisy - &m.forward(&a).unwrap();
    let xb = &b.noisy - &m.forward(&b).unwrap();
    let err = (&xa - &xb).iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
    assert!(err < 1e-10, "{err}");
    let v = m.forward(&a).unwrap();
    assert!(v.iter().any(|z| z.abs() > 1e-3));
}
