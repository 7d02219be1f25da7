//! Two-stage optimisation: base restoration training with the diffusion
//! objective, then fine-tuning with the alignment losses added.
//!
//! All randomness of step `s` derives from `(seed, s)`: the sample order is
//! a seeded permutation per epoch and the noise draw has its own stream.
//! Together with 64-bit optimizer moments stored in checkpoints this makes
//! resumption bit-identical to an uninterrupted run.

mod optim;

pub use optim::{lr_schedule, AdamW, AdamWParams};

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Assembler, Corpus};
use crate::degrade::TrainingTriplet;
use crate::error::{Error, Result};
use crate::objectives::{loss_and_grad, AlignmentWeights, LossParts, NoiseDraw};
use crate::rng;
use crate::stdt::checkpoint::{load_checkpoint, read_tensor, save_checkpoint, write_tensor, CheckpointManifest};
use crate::stdt::{Denoiser, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    /// Peak learning rate.
    pub lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0 disables periodic saves).
    pub checkpoint_every: u64,
    /// Weights used during stage 2.
    pub alignment: AlignmentWeights,
    pub teacher_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_steps: 4000,
            stage2_steps: 300,
            lr: 5e-5,
            warmup_steps: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            batch_size: 4,
            seed: 0,
            checkpoint_every: 1000,
            alignment: AlignmentWeights::default(),
            teacher_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Step counts of the full-scale schedule.
    pub fn full_scale() -> Self {
        Self {
            stage1_steps: 40_000,
            stage2_steps: 3_000,
            warmup_steps: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if self.stage1_steps > 0 && self.warmup_steps >= self.stage1_steps {
            return Err(Error::config("warmup_steps must be smaller than stage1_steps"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        self.alignment.validate()
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Base,
    Align,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub stage: Stage,
    pub l_diff: f64,
    pub l_angular: f64,
    pub l_scale: f64,
    pub total: f64,
    pub lr: f64,
}

/// Parameters, optimizer state and the global step count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Denoiser<f32>,
    pub opt: AdamW,
    pub step: u64,
}

impl TrainState {
    pub fn new(model: Denoiser<f32>, cfg: &TrainConfig) -> Self {
        let shapes: Vec<Vec<usize>> = model.tensors().iter().map(|(_, t)| t.shape().to_vec()).collect();
        Self {
            opt: AdamW::new(cfg.adamw(), &shapes),
            model,
            step: 0,
        }
    }
}

/// Digest of the randomness feeding the step after `step`.
pub fn rng_digest(seed: u64, step: u64) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(step.to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerExtra {
    stage: Stage,
    adam_t: u64,
    train: TrainConfig,
}

/// Save parameters, optimizer moments and bookkeeping.
pub fn save_state(dir: &Path, state: &TrainState, cfg: &TrainConfig, stage: Stage) -> Result<CheckpointManifest> {
    let extra = TrainerExtra {
        stage,
        adam_t: state.opt.t,
        train: cfg.clone(),
    };
    let extra = serde_json::to_value(&extra).map_err(|e| Error::json(dir, e))?;
    let manifest = save_checkpoint(dir, &state.model, state.step, &rng_digest(cfg.seed, state.step), extra)?;
    for ((name, _), (m, v)) in state.model.tensors().iter().zip(state.opt.m.iter().zip(&state.opt.v)) {
        write_tensor(&dir.join("optim/m").join(format!("{name}.bin")), &m.view())?;
        write_tensor(&dir.join("optim/v").join(format!("{name}.bin")), &v.view())?;
    }
    Ok(manifest)
}

/// Load a training state saved by [`save_state`], with its train config.
pub fn load_state(dir: &Path) -> Result<(TrainState, TrainConfig, CheckpointManifest)> {
    let (model, manifest) = load_checkpoint::<f32>(dir)?;
    let extra: TrainerExtra = serde_json::from_value(manifest.extra.clone()).map_err(|e| Error::json(dir.join("manifest.json"), e))?;
    let mut state = TrainState::new(model, &extra.train);
    for (i, entry) in manifest.tensors.iter().enumerate() {
        let m = read_tensor::<f64>(&dir.join("optim/m").join(format!("{}.bin", entry.name)))?;
        let v = read_tensor::<f64>(&dir.join("optim/v").join(format!("{}.bin", entry.name)))?;
        if m.shape() != entry.shape.as_slice() || v.shape() != entry.shape.as_slice() {
            return Err(Error::shape(format!("optimizer state {}", entry.name), format!("{:?}", entry.shape), format!("{:?}", m.shape())));
        }
        state.opt.m[i] = m;
        state.opt.v[i] = v;
    }
    state.opt.t = extra.adam_t;
    state.step = manifest.step;
    Ok((state, extra.train, manifest))
}

/// Drives optimisation over a corpus.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    assembler: Assembler<'a>,
    triplets: Vec<TrainingTriplet>,
    out: Option<PathBuf>,
    log: Option<BufWriter<File>>,
    epoch_cache: Option<(u64, Vec<usize>)>,
    last_checkpoint: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    /// `out`, when given, receives `train_log.jsonl` and checkpoints.
    pub fn new(corpus: &'a Corpus, model: &ModelConfig, cfg: &TrainConfig, out: Option<&Path>) -> Result<Self> {
        model.validate()?;
        let triplets = corpus.triplets(model.history)?;
        Self::with_triplets(corpus, model, cfg, out, triplets)
    }

    /// Train on an explicit triplet list, e.g. one read from an index file.
    pub fn with_triplets(
        corpus: &'a Corpus,
        model: &ModelConfig,
        cfg: &TrainConfig,
        out: Option<&Path>,
        triplets: Vec<TrainingTriplet>,
    ) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        if let Some(t) = triplets.iter().find(|t| t.history.len() != model.history) {
            return Err(Error::shape("triplet history length", model.history, t.history.len()));
        }
        let triplets: Vec<TrainingTriplet> = triplets
            .into_iter()
            .filter(|t| {
                corpus
                    .scene(&t.scene_id)
                    .map(|s| t.t + model.t_cur <= s.gt.timesteps())
                    .unwrap_or(false)
            })
            .collect();
        if triplets.is_empty() {
            return Err(Error::config("corpus yields no training triplets for this history length"));
        }
        let log = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("train_log.jsonl");
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            assembler: Assembler::new(corpus, model, cfg.teacher_seed),
            triplets,
            out: out.map(Path::to_path_buf),
            log,
            epoch_cache: None,
            last_checkpoint: None,
        })
    }

    pub fn num_triplets(&self) -> usize {
        self.triplets.len()
    }

    pub fn init_state(&self) -> Result<TrainState> {
        Ok(TrainState::new(Denoiser::new(&self.assembler.model)?, &self.cfg))
    }

    fn sample_index(&mut self, position: u64) -> usize {
        let m = self.triplets.len() as u64;
        let epoch = position / m;
        if self.epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.triplets.len()).collect();
            perm.shuffle(&mut rng::stream(self.cfg.seed, &format!("trainer/epoch/{epoch}")));
            self.epoch_cache = Some((epoch, perm));
        }
        self.epoch_cache.as_ref().expect("cached").1[(position % m) as usize]
    }

    fn write_log(&mut self, value: &impl Serialize) -> Result<()> {
        if let Some(w) = self.log.as_mut() {
            let line = serde_json::to_string(value).map_err(|e| Error::json("train_log.jsonl", e))?;
            writeln!(w, "{line}").map_err(|e| Error::io("train_log.jsonl", e))?;
            w.flush().map_err(|e| Error::io("train_log.jsonl", e))?;
        }
        Ok(())
    }

    /// Log header echoing the configuration in force for `stage`.
    pub fn write_header(&mut self, stage: Stage, weights: AlignmentWeights) -> Result<()> {
        let header = serde_json::json!({
            "header": true,
            "stage": stage,
            "alpha": weights.alpha,
            "beta": weights.beta,
            "lr_peak": self.cfg.lr,
            "warmup_steps": self.cfg.warmup_steps,
            "beta1": self.cfg.beta1,
            "beta2": self.cfg.beta2,
            "weight_decay": self.cfg.weight_decay,
            "batch_size": self.cfg.batch_size,
            "seed": self.cfg.seed,
            "triplets": self.triplets.len(),
            "model": self.assembler.model,
        });
        self.write_log(&header)
    }

    /// One optimisation step on the state's next batch.
    pub fn step(&mut self, state: &mut TrainState, stage: Stage, weights: AlignmentWeights) -> Result<StepLog> {
        let s = state.step + 1;
        let b = self.cfg.batch_size as u64;
        let idx: Vec<usize> = ((s - 1) * b..s * b).map(|p| self.sample_index(p)).collect();
        let batch = {
            let refs: Vec<&TrainingTriplet> = idx.iter().map(|&i| &self.triplets[i]).collect();
            self.assembler.batch(&refs)?
        };
        let mut r = rng::stream(self.cfg.seed, &format!("trainer/noise/{s}"));
        let noise = NoiseDraw::sample(&mut r, batch.x0.dim());
        let (parts, grads) = loss_and_grad(&state.model, &batch, &noise, weights).map_err(|e| match e {
            Error::NonFinite { stage } => Error::NonFinite {
                stage: format!(
                    "{stage} at step {s} (samples {idx:?}); last good checkpoint: {}",
                    self.last_checkpoint
                        .as_ref()
                        .map_or("none".to_string(), |p| p.display().to_string())
                ),
            },
            other => other,
        })?;
        let lr = lr_schedule(s, self.cfg.lr, self.cfg.warmup_steps);
        state.opt.step(state.model.tensors_mut(), grads.tensors(), lr);
        state.step = s;
        let LossParts {
            l_diff,
            l_angular,
            l_scale,
            total,
        } = parts;
        let entry = StepLog {
            step: s,
            stage,
            l_diff,
            l_angular,
            l_scale,
            total,
            lr,
        };
        self.write_log(&entry)?;
        Ok(entry)
    }

    fn checkpoint(&mut self, state: &TrainState, name: &str, stage: Stage) -> Result<Option<PathBuf>> {
        match &self.out {
            Some(out) => {
                let dir = out.join(name);
                save_state(&dir, state, &self.cfg, stage)?;
                self.last_checkpoint = Some(dir.clone());
                Ok(Some(dir))
            }
            None => Ok(None),
        }
    }

    /// Run stage 1 until the global step reaches `stage1_steps`.
    pub fn stage1(&mut self, state: &mut TrainState) -> Result<Vec<StepLog>> {
        self.write_header(Stage::Base, AlignmentWeights::OFF)?;
        let mut logs = Vec::new();
        while state.step < self.cfg.stage1_steps {
            let entry = self.step(state, Stage::Base, AlignmentWeights::OFF)?;
            if entry.step % 100 == 0 {
                info!("stage 1 step {} loss {:.5} lr {:.2e}", entry.step, entry.total, entry.lr);
            }
            logs.push(entry);
            if self.cfg.checkpoint_every > 0 && state.step.is_multiple_of(self.cfg.checkpoint_every) && state.step < self.cfg.stage1_steps {
                self.checkpoint(state, &format!("checkpoints/step_{:06}", state.step), Stage::Base)?;
            }
        }
        self.checkpoint(state, "stage1", Stage::Base)?;
        Ok(logs)
    }

    /// Run `stage2_steps` fine-tuning steps with `weights`, continuing the
    /// optimizer state and schedule. A checkpoint is written at every mark
    /// (counted from the start of stage 2) and `on_mark` sees the state there.
    pub fn stage2(
        &mut self,
        state: &mut TrainState,
        weights: AlignmentWeights,
        marks: &[u64],
        on_mark: &mut dyn FnMut(u64, &TrainState) -> Result<()>,
    ) -> Result<(Vec<StepLog>, Vec<(u64, Option<PathBuf>)>)> {
        self.write_header(Stage::Align, weights)?;
        let start = state.step;
        let end = start + self.cfg.stage2_steps.max(marks.iter().copied().max().unwrap_or(0));
        let mut logs = Vec::new();
        let mut saved = Vec::new();
        while state.step < end {
            let entry = self.step(state, Stage::Align, weights)?;
            if entry.step % 100 == 0 {
                info!("stage 2 step {} loss {:.5}", entry.step - start, entry.total);
            }
            logs.push(entry);
            let k = state.step - start;
            if marks.contains(&k) {
                let path = self.checkpoint(state, &format!("sweep/step_{k:06}"), Stage::Align)?;
                on_mark(k, state)?;
                saved.push((k, path));
            }
        }
        self.checkpoint(state, "stage2", Stage::Align)?;
        Ok((logs, saved))
    }
}

/// Stage 1 from scratch (or from `resume`), writing into `out`.
pub fn train_stage1(
    corpus: &Corpus,
    model: &ModelConfig,
    cfg: &TrainConfig,
    out: Option<&Path>,
    resume: Option<TrainState>,
) -> Result<(TrainState, Vec<StepLog>)> {
    let mut trainer = Trainer::new(corpus, model, cfg, out)?;
    let mut state = match resume {
        Some(s) => s,
        None => trainer.init_state()?,
    };
    let logs = trainer.stage1(&mut state)?;
    Ok((state, logs))
}

/// Stage 2 starting from a stage-1 checkpoint directory.
pub fn train_stage2_align(
    checkpoint: &Path,
    corpus: &Corpus,
    cfg: &TrainConfig,
    out: Option<&Path>,
    marks: &[u64],
) -> Result<(TrainState, Vec<StepLog>, Vec<(u64, Option<PathBuf>)>)> {
    let (mut state, _, manifest) = load_state(checkpoint)?;
    let mut trainer = Trainer::new(corpus, &manifest.model, cfg, out)?;
    let (logs, saved) = trainer.stage2(&mut state, cfg.alignment, marks, &mut |_, _| Ok(()))?;
    Ok((state, logs, saved))
}
