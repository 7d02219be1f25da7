//! Autoregressive, history-conditioned restoration of corrupted multi-camera
//! sequences.
//!
//! Each chunk of `T_cur` timesteps is sampled by integrating the learned
//! velocity field with Euler steps from pure noise at τ = 1 down to τ = 0.
//! All cameras of a chunk go through one joint forward pass. History slots
//! hold previously restored frames once they exist.

use std::path::Path;

use ndarray::{s, Array3, Array6};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{geometry_vectors, guidance_image, to_model_range};
use crate::dataset::{write_sequence, SequenceMeta};
use crate::error::{Error, Result};
use crate::rng;
use crate::stdt::{Denoiser, DenoiserInput, HistoryInput, GUIDANCE_CHANNELS};
use crate::synthworld::MultiViewSequence;

/// How history slots before the first frame are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColdStart {
    /// Slots before the sequence start hold the degraded first frame.
    DegradedAsHistory,
    /// Slots before the sequence start repeat the earliest restored frame,
    /// falling back to the degraded first frame while none exists.
    ReplicateFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreConfig {
    /// History length; must match the model.
    pub history: usize,
    /// Euler steps.
    pub steps: usize,
    /// Timesteps restored per forward pass.
    pub chunk: usize,
    pub cold_start: ColdStart,
    pub seed: u64,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            history: 2,
            steps: 8,
            chunk: 1,
            cold_start: ColdStart::DegradedAsHistory,
            seed: 0,
        }
    }
}

impl RestoreConfig {
    pub fn for_model(model: &Denoiser<f32>) -> Self {
        Self {
            history: model.config.history,
            chunk: model.config.t_cur,
            ..Self::default()
        }
    }

    pub fn validate(&self, model: &Denoiser<f32>) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("sampler steps must be at least 1"));
        }
        if self.chunk == 0 {
            return Err(Error::config("chunk size must be at least 1"));
        }
        if self.history != model.config.history {
            return Err(Error::shape("history length", model.config.history, self.history));
        }
        Ok(())
    }
}

/// Conditioning for one chunk, images in [−1, 1], `[1,V,T,H,W,·]`.
#[derive(Debug, Clone)]
pub struct ChunkInput {
    pub corrupted: Array6<f32>,
    pub guidance: Array6<f32>,
    pub history: Option<HistoryInput<f32>>,
    pub geometry: ndarray::Array3<f32>,
}

/// Euler-integrate the velocity field for one chunk. `noise_label` names
/// the stream of the initial noise. Output is in [0, 1], `[1,V,T,H,W,3]`.
pub fn sample_restore(model: &Denoiser<f32>, chunk: &ChunkInput, steps: usize, seed: u64, noise_label: &str) -> Result<Array6<f32>> {
    if steps == 0 {
        return Err(Error::config("sampler steps must be at least 1"));
    }
    let mut r = rng::stream(seed, noise_label);
    let mut x = Array6::from_shape_simple_fn(chunk.corrupted.dim(), || {
        let z: f64 = StandardNormal.sample(&mut r);
        z as f32
    });
    let t = chunk.corrupted.dim().2;
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let tau = 1.0 - i as f64 * dt;
        let input = DenoiserInput {
            noisy: x,
            corrupted: chunk.corrupted.clone(),
            guidance: chunk.guidance.clone(),
            history: chunk.history.clone(),
            geometry: chunk.geometry.clone(),
            tau: vec![tau; chunk.corrupted.dim().0],
            time_index: (0..t).map(|i| i as f64).collect(),
        };
        let v = model.forward(&input)?;
        x = input.noisy;
        x.scaled_add(-(dt as f32), &v);
    }
    Ok(x.mapv(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 0.5).clamp(0.0, 1.0)))
}

/// Inputs of a sequence-level restoration.
pub struct SequenceInput<'a> {
    pub corrupted: &'a MultiViewSequence,
    /// Depth and semantics used as guidance; usually the corrupted render.
    pub guidance: &'a MultiViewSequence,
    pub far_plane: f64,
}

/// Restore a whole sequence with the given cameras (all by default).
///
/// `tamper` sees each chunk of restored frames (`[t][k]` in [0, 1]) before
/// it enters the history of later chunks.
pub fn restore_sequence_with(
    model: &Denoiser<f32>,
    input: &SequenceInput<'_>,
    cfg: &RestoreConfig,
    views: &[usize],
    tamper: &mut dyn FnMut(usize, &mut [Vec<Array3<f32>>]),
) -> Result<Vec<Vec<Array3<f32>>>> {
    cfg.validate(model)?;
    let seq = input.corrupted;
    seq.validate()?;
    let g = input.guidance;
    if (g.timesteps(), g.num_views(), g.height, g.width) != (seq.timesteps(), seq.num_views(), seq.height, seq.width) {
        return Err(Error::shape(
            "guidance sequence",
            format!("{:?}", (seq.timesteps(), seq.num_views(), seq.height, seq.width)),
            format!("{:?}", (g.timesteps(), g.num_views(), g.height, g.width)),
        ));
    }
    if let Some(&k) = views.iter().find(|&&k| k >= seq.num_views()) {
        return Err(Error::shape("view index", format!("< {}", seq.num_views()), k));
    }
    let (h, w, tl) = (seq.height, seq.width, seq.timesteps());
    let geo_all = geometry_vectors(&seq.rig, h, w);
    let mut geometry = ndarray::Array3::zeros((1, views.len(), geo_all.ncols()));
    for (i, &k) in views.iter().enumerate() {
        geometry.slice_mut(s![0, i, ..]).assign(&geo_all.row(k));
    }
    let model_frames: Vec<Vec<Array3<f32>>> = (0..tl)
        .map(|t| views.iter().map(|&k| to_model_range(&seq.frames[t][k])).collect())
        .collect();
    let guide: Vec<Vec<Array3<f32>>> = (0..tl)
        .map(|t| {
            views
                .iter()
                .map(|&k| guidance_image(&g.depth[t][k], &g.semantic[t][k], input.far_plane))
                .collect()
        })
        .collect();

    // Restored frames in model range, and in [0, 1] for the caller.
    let mut restored_m: Vec<Vec<Array3<f32>>> = Vec::with_capacity(tl);
    let mut restored: Vec<Vec<Array3<f32>>> = Vec::with_capacity(tl);
    let mut t0 = 0;
    while t0 < tl {
        let tc = cfg.chunk.min(tl - t0);
        let v = views.len();
        let mut corrupted = Array6::zeros((1, v, tc, h, w, 3));
        let mut guidance = Array6::zeros((1, v, tc, h, w, GUIDANCE_CHANNELS));
        for ti in 0..tc {
            for k in 0..v {
                corrupted.slice_mut(s![0, k, ti, .., .., ..]).assign(&model_frames[t0 + ti][k]);
                guidance.slice_mut(s![0, k, ti, .., .., ..]).assign(&guide[t0 + ti][k]);
            }
        }
        let history = (cfg.history > 0).then(|| {
            let mut frames = Array6::zeros((1, v, cfg.history, h, w, 3));
            let mut hg = Array6::zeros((1, v, cfg.history, h, w, GUIDANCE_CHANNELS));
            for slot in 0..cfg.history {
                let st = t0 as isize - cfg.history as isize + slot as isize;
                let (src, gt_idx): (&Vec<Array3<f32>>, usize) = if st >= 0 {
                    (&restored_m[st as usize], st as usize)
                } else {
                    match cfg.cold_start {
                        ColdStart::ReplicateFirst if !restored_m.is_empty() => (&restored_m[0], 0),
                        _ => (&model_frames[0], 0),
                    }
                };
                for k in 0..v {
                    frames.slice_mut(s![0, k, slot, .., .., ..]).assign(&src[k]);
                    hg.slice_mut(s![0, k, slot, .., .., ..]).assign(&guide[gt_idx][k]);
                }
            }
            HistoryInput { frames, guidance: hg }
        });
        let chunk = ChunkInput {
            corrupted,
            guidance,
            history,
            geometry: geometry.clone(),
        };
        let out = sample_restore(model, &chunk, cfg.steps, cfg.seed, &format!("restore/chunk/{t0}"))?;
        let mut frames: Vec<Vec<Array3<f32>>> = (0..tc)
            .map(|ti| (0..v).map(|k| out.slice(s![0, k, ti, .., .., ..]).to_owned()).collect())
            .collect();
        tamper(t0, &mut frames);
        for f in frames {
            restored_m.push(f.iter().map(to_model_range).collect());
            restored.push(f);
        }
        t0 += tc;
    }
    Ok(restored)
}

/// Restore all cameras jointly.
pub fn restore_sequence(model: &Denoiser<f32>, input: &SequenceInput<'_>, cfg: &RestoreConfig) -> Result<MultiViewSequence> {
    let views: Vec<usize> = (0..input.corrupted.num_views()).collect();
    let frames = restore_sequence_with(model, input, cfg, &views, &mut |_, _| {})?;
    Ok(input.corrupted.with_frames(frames))
}

/// Restore each camera on its own, with the other cameras absent from
/// every forward pass.
pub fn restore_per_view(model: &Denoiser<f32>, input: &SequenceInput<'_>, cfg: &RestoreConfig) -> Result<MultiViewSequence> {
    let kn = input.corrupted.num_views();
    let per: Vec<Vec<Vec<Array3<f32>>>> = (0..kn)
        .map(|k| restore_sequence_with(model, input, cfg, &[k], &mut |_, _| {}))
        .collect::<Result<_>>()?;
    let frames = (0..input.corrupted.timesteps())
        .map(|t| (0..kn).map(|k| per[k][t][0].clone()).collect())
        .collect();
    Ok(input.corrupted.with_frames(frames))
}

/// Provenance stored in the `meta.json` of emitted pseudo ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreProvenance {
    pub checkpoint_digest: String,
    pub restore_config: RestoreConfig,
    pub source: String,
}

/// Write restored frames in the dataset layout. Depth and semantics are
/// carried over from `restored` unchanged.
pub fn emit_pseudo_gt(restored: &MultiViewSequence, base_meta: &SequenceMeta, out: &Path, provenance: &RestoreProvenance) -> Result<SequenceMeta> {
    let mut meta = base_meta.clone();
    meta.rig = restored.rig.clone();
    meta.timesteps = restored.timesteps();
    meta.num_cameras = restored.num_views();
    meta.provenance = serde_json::to_value(provenance).map_err(|e| Error::json(out.join("meta.json"), e))?;
    write_sequence(out, restored, &meta)?;
    Ok(meta)
}
