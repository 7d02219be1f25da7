use log::warn;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{uniform, TemporalSpec};
use crate::error::Result;
use crate::synthworld::MultiViewSequence;

/// How a non-kept frame was synthesised: `weight·out[prev] + (1−weight)·out[next]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendRecord {
    pub t: usize,
    pub prev: Option<usize>,
    pub next: Option<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRecord {
    pub kept: Vec<bool>,
    pub blends: Vec<BlendRecord>,
    /// Set when the sequence was too short to degrade.
    pub degenerate: bool,
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with clamped borders.
pub(crate) fn blur(img: &Array3<f32>, sigma: f64) -> Array3<f32> {
    if sigma == 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (h, w, c) = img.dim();
    let mut tmp = Array3::<f32>::zeros((h, w, c));
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (o, kv) in kernel.iter().enumerate() {
                    let jj = (j as i64 + o as i64 - r).clamp(0, w as i64 - 1) as usize;
                    acc += kv * img[[i, jj, ch]];
                }
                tmp[[i, j, ch]] = acc;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((h, w, c));
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (o, kv) in kernel.iter().enumerate() {
                    let ii = (i as i64 + o as i64 - r).clamp(0, h as i64 - 1) as usize;
                    acc += kv * tmp[[ii, j, ch]];
                }
                out[[i, j, ch]] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Emulate sparse temporal reconstruction: kept frames pass through with a
/// light blur, every other frame becomes a ghosted blend of the two nearest
/// kept frames. The blend weight is drawn once per timestep and shared by
/// all cameras.
pub fn degrade_temporal(
    seq: &MultiViewSequence,
    spec: &TemporalSpec,
    rng: &mut impl Rng,
) -> Result<(MultiViewSequence, TemporalRecord)> {
    let t_len = seq.timesteps();
    if t_len < 2 {
        warn!("sequence with {t_len} timesteps is too short for temporal degradation");
        let record = TemporalRecord {
            kept: vec![true; t_len],
            blends: Vec::new(),
            degenerate: true,
        };
        return Ok((seq.clone(), record));
    }
    let kept: Vec<bool> = (0..t_len).map(|t| spec.is_kept(t)).collect();
    let mut frames: Vec<Vec<Array3<f32>>> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if kept[t] {
            frames.push(seq.frames[t].iter().map(|f| blur(f, spec.kept_blur_sigma)).collect());
        } else {
            frames.push(Vec::new());
        }
    }
    let mut blends = Vec::new();
    for t in 0..t_len {
        if kept[t] {
            continue;
        }
        let prev = (0..t).rev().find(|&s| kept[s]);
        let next = (t + 1..t_len).find(|&s| kept[s]);
        let weight = uniform(rng, spec.ghost_weight);
        let views = (0..seq.num_views())
            .map(|k| match (prev, next) {
                (Some(p), Some(n)) => {
                    let (a, b) = (&frames[p][k], &frames[n][k]);
                    let wf = weight as f32;
                    ndarray::Zip::from(a).and(b).map_collect(|&x, &y| wf * x + (1.0 - wf) * y)
                }
                (Some(p), None) => frames[p][k].clone(),
                (None, Some(n)) => frames[n][k].clone(),
                (None, None) => seq.frames[t][k].clone(),
            })
            .collect();
        frames[t] = views;
        blends.push(BlendRecord { t, prev, next, weight });
    }
    let record = TemporalRecord {
        kept,
        blends,
        degenerate: false,
    };
    Ok((seq.with_frames(frames), record))
}
