//! Image metrics, ground-truth-geometry consistency metrics, the ablation
//! grid, the fine-tuning duration sweep and report files.

mod ablation;
mod metrics;
mod report;

pub use ablation::{config_diff, run_ablation_grid, AblationConfig, AblationRow, AblationTable, DirectionalCheck, Variant};
pub use metrics::{
    cross_view_consistency, gaussian_window, mse, overlap_mask, psnr, ssim, temporal_flicker, temporal_flicker_per_step, PSNR_CAP, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use report::{emit_report, read_metrics_csv, MetricRow, ReportBundle, ReportFiles};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SceneRecord};
use crate::error::Result;
use crate::objectives::AlignmentWeights;
use crate::restorer::{restore_sequence, RestoreConfig, SequenceInput};
use crate::stdt::Denoiser;
use crate::synthworld::{MultiViewSequence, Scene};
use crate::trainer::{TrainState, Trainer};

/// Timesteps with `t % INTERPOLATION_EVERY == 0` form the interpolation
/// split; the rest form the reconstruction split.
pub const INTERPOLATION_EVERY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_interp: f64,
    pub psnr_recon: f64,
    pub cross_view: Option<f64>,
    pub flicker: Option<f64>,
    pub seconds: f64,
}

/// Means over scenes; optional metrics average the scenes that have them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_interp: f64,
    pub psnr_recon: f64,
    pub cross_view: Option<f64>,
    pub flicker: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub scenes: Vec<SceneMetrics>,
    pub aggregate: Aggregate,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn mean_opt<'a>(xs: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().copied().collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

impl MetricReport {
    pub fn new(label: impl Into<String>, scenes: Vec<SceneMetrics>) -> Self {
        let aggregate = Aggregate {
            psnr: mean(scenes.iter().map(|s| s.psnr)),
            ssim: mean(scenes.iter().map(|s| s.ssim)),
            psnr_interp: mean(scenes.iter().map(|s| s.psnr_interp)),
            psnr_recon: mean(scenes.iter().map(|s| s.psnr_recon)),
            cross_view: mean_opt(scenes.iter().map(|s| &s.cross_view)),
            flicker: mean_opt(scenes.iter().map(|s| &s.flicker)),
            seconds: scenes.iter().map(|s| s.seconds).sum(),
        };
        Self {
            label: label.into(),
            scenes,
            aggregate,
        }
    }
}

/// Frame-averaged metrics of `pred` against the ground truth.
pub fn evaluate_sequence(scene_id: &str, pred: &MultiViewSequence, gt: &MultiViewSequence, scene: &Scene, seconds: f64) -> SceneMetrics {
    let mut all = Vec::new();
    let mut interp = Vec::new();
    let mut recon = Vec::new();
    let mut ss = Vec::new();
    for t in 0..gt.timesteps() {
        for k in 0..gt.num_views() {
            let p = psnr(&pred.frames[t][k], &gt.frames[t][k], 1.0);
            all.push(p);
            if t % INTERPOLATION_EVERY == 0 {
                interp.push(p);
            } else {
                recon.push(p);
            }
            ss.push(ssim(&pred.frames[t][k], &gt.frames[t][k]));
        }
    }
    SceneMetrics {
        scene_id: scene_id.to_string(),
        psnr: mean(all.into_iter()),
        ssim: mean(ss.into_iter()),
        psnr_interp: mean(interp.into_iter()),
        psnr_recon: mean(recon.into_iter()),
        cross_view: cross_view_consistency(pred, gt),
        flicker: temporal_flicker(pred, gt, scene),
        seconds,
    }
}

/// Metrics of the corrupted inputs themselves.
pub fn evaluate_corrupted(corpus: &Corpus) -> MetricReport {
    let scenes = corpus
        .scenes
        .iter()
        .map(|s| evaluate_sequence(&s.id, &s.degraded, &s.gt, &s.scene, 0.0))
        .collect();
    MetricReport::new("corrupted", scenes)
}

/// Restore one scene from its degraded render.
pub fn restore_scene(model: &Denoiser<f32>, s: &SceneRecord, cfg: &RestoreConfig) -> Result<(MultiViewSequence, f64)> {
    let start = Instant::now();
    let input = SequenceInput {
        corrupted: &s.degraded,
        guidance: &s.degraded,
        far_plane: s.far_plane,
    };
    let out = restore_sequence(model, &input, cfg)?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Restore and evaluate every scene of `corpus`.
pub fn evaluate_model(label: &str, model: &Denoiser<f32>, corpus: &Corpus, cfg: &RestoreConfig) -> Result<MetricReport> {
    let scenes = corpus
        .scenes
        .iter()
        .map(|s| {
            let (out, secs) = restore_scene(model, s, cfg)?;
            Ok(evaluate_sequence(&s.id, &out, &s.gt, &s.scene, secs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new(label, scenes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Fine-tuning steps, counted from the start of stage 2.
    pub step: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub flicker: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Index into `points` of the mark with the highest PSNR.
    pub best: usize,
}

impl SweepReport {
    pub fn new(points: Vec<SweepPoint>) -> Self {
        let best = points
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.psnr.total_cmp(&b.1.psnr))
            .map_or(0, |(i, _)| i);
        Self { points, best }
    }

    pub fn best_point(&self) -> Option<&SweepPoint> {
        self.points.get(self.best)
    }
}

/// Run stage 2 from `state`, evaluating on `eval` at every mark.
pub fn sweep_stage2(
    trainer: &mut Trainer<'_>,
    state: &mut TrainState,
    weights: AlignmentWeights,
    marks: &[u64],
    eval: &Corpus,
    restore: &RestoreConfig,
) -> Result<SweepReport> {
    let mut points = Vec::new();
    trainer.stage2(state, weights, marks, &mut |step, st| {
        let rep = evaluate_model(&format!("step {step}"), &st.model, eval, restore)?;
        points.push(SweepPoint {
            step,
            psnr: rep.aggregate.psnr,
            ssim: rep.aggregate.ssim,
            flicker: rep.aggregate.flicker,
        });
        Ok(())
    })?;
    Ok(SweepReport::new(points))
}
