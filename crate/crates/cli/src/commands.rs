use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use drivefix_core::corpus::{
    read_triplet_index, write_degraded_scene, write_gt_scene, write_triplet_index, Corpus, CorpusConfig, DEGRADED_DIR, TRIPLET_INDEX,
};
use drivefix_core::dataset::{list_scenes, read_json, read_sequence, validate_layout, write_json};
use drivefix_core::degrade::CorruptionSpec;
use drivefix_core::evalkit::{
    emit_report, evaluate_corrupted, evaluate_sequence, run_ablation_grid, sweep_stage2, AblationConfig, MetricReport, ReportBundle,
};
use drivefix_core::manifest::{tree_digest, RunManifest};
use drivefix_core::presets::Preset;
use drivefix_core::restorer::{emit_pseudo_gt, restore_sequence, RestoreConfig, RestoreProvenance, SequenceInput};
use drivefix_core::stdt::checkpoint::load_checkpoint;
use drivefix_core::stdt::{Denoiser, ModelConfig};
use drivefix_core::synthworld::generate_scene;
use drivefix_core::trainer::{load_state, TrainConfig, Trainer};
use drivefix_core::{Error, Result};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{resolve, Flags};
use crate::{AblateArgs, BuildArgs, CorruptArgs, EvalArgs, FinetuneArgs, ReportArgs, RestoreArgs, SynthArgs, TrainArgs};

/// Bundle written next to every report so `report` can merge them.
pub const RESULTS_JSON: &str = "results.json";

fn log_resolved(command: &str, value: &impl Serialize) -> serde_json::Value {
    let v = serde_json::to_value(value).expect("configs serialize");
    info!("{command} config: {v}");
    v
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::MissingInput(dir.to_path_buf()))
    }
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    create_dir(to)?;
    for entry in fs::read_dir(from).map_err(|e| Error::io(from, e))? {
        let p = entry.map_err(|e| Error::io(from, e))?.path();
        let name = p.file_name().expect("entries have names");
        if name == DEGRADED_DIR || name.to_string_lossy().starts_with("run_manifest") {
            continue;
        }
        if p.is_dir() {
            copy_tree(&p, &to.join(name))?;
        } else {
            fs::copy(&p, to.join(name)).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

/// A scene directory (holding `meta.json`) or every scene under a corpus.
fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join("meta.json").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let dirs = list_scenes(root)?;
    if dirs.is_empty() {
        return Err(Error::MissingInput(root.join("scene_*")));
    }
    Ok(dirs)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let start = Instant::now();
    let defaults = Preset::from(a.preset).config().corpus;
    let mut flags = Flags::default();
    flags
        .set("seed", a.seed)
        .set("scenes", a.scenes)
        .set("first_scene", a.first_scene)
        .set("height", a.height)
        .set("width", a.width)
        .set("scene.timesteps", a.timesteps)
        .set("rig", a.rig.map(drivefix_core::synthworld::RigPreset::from));
    let cfg: CorpusConfig = resolve(&defaults, a.config.as_deref(), flags)?;
    if cfg.scenes == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::config("scenes, height and width must be positive"));
    }
    cfg.scene.validate()?;
    let config = log_resolved("synth", &cfg);
    create_dir(&a.out)?;
    (cfg.first_scene..cfg.first_scene + cfg.scenes)
        .into_par_iter()
        .map(|i| write_gt_scene(&a.out, &cfg, i).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    let mut m = RunManifest::new("synth", config);
    m.seeds.insert("corpus".into(), cfg.seed);
    let m = m.finish(&a.out, start.elapsed().as_secs_f64())?;
    info!("wrote {} scenes ({} files) to {}", cfg.scenes, m.outputs.len(), a.out.display());
    Ok(())
}

pub fn corrupt(a: CorruptArgs) -> Result<()> {
    let start = Instant::now();
    let mut flags = Flags::default();
    flags.set("seed", a.seed);
    let spec: CorruptionSpec = resolve(&CorruptionSpec::default(), a.spec.as_deref(), flags)?;
    spec.validate()?;
    let config = log_resolved("corrupt", &spec);
    let scenes = list_scenes(&a.input)?;
    if scenes.is_empty() {
        return Err(Error::MissingInput(a.input.join("scene_*")));
    }
    let input_digest = tree_digest(&a.input)?;
    let out = a.out.clone().unwrap_or_else(|| a.input.clone());
    let in_place = out == a.input;
    scenes
        .par_iter()
        .map(|dir| {
            let target = if in_place {
                dir.clone()
            } else {
                let t = out.join(dir.file_name().expect("scene dirs have names"));
                copy_tree(dir, &t)?;
                t
            };
            write_degraded_scene(&target, &spec).map(|_| ())
        })
        .collect::<Result<Vec<()>>>()?;
    let mut m = RunManifest::new("corrupt", config);
    m.seeds.insert("corruption".into(), spec.seed);
    m.inputs.insert("gt".into(), input_digest);
    let secs = start.elapsed().as_secs_f64();
    if in_place {
        let marker = format!("/{DEGRADED_DIR}/");
        m.finish_named(&out, "run_manifest.corrupt.json", |p| p.contains(&marker), secs)?;
    } else {
        m.finish(&out, secs)?;
    }
    info!("corrupted {} scenes into {}", scenes.len(), out.display());
    Ok(())
}

pub fn build(a: BuildArgs) -> Result<()> {
    let start = Instant::now();
    if a.history == 0 {
        return Err(Error::config("history length must be at least 1"));
    }
    let corpus = Corpus::load(&a.data)?;
    let triplets = corpus.triplets(a.history)?;
    let index = a.out.clone().unwrap_or_else(|| a.data.join(TRIPLET_INDEX));
    let dir = index.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    create_dir(&dir)?;
    write_triplet_index(&index, &triplets)?;
    let mut combos: BTreeMap<u32, usize> = BTreeMap::new();
    for t in &triplets {
        *combos.entry(t.combo_id).or_default() += 1;
    }
    info!("{} triplets, per combo {:?}", triplets.len(), combos);
    let mut m = RunManifest::new("build", serde_json::json!({ "history": a.history, "index": index }));
    m.inputs.insert("data".into(), tree_digest(&a.data)?);
    let name = index.file_name().expect("index is a file").to_string_lossy().into_owned();
    m.finish_named(&dir, "run_manifest.build.json", |p| p == name, start.elapsed().as_secs_f64())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainFile {
    model: ModelConfig,
    train: TrainConfig,
}

fn load_training_data(data: &Path, history: usize) -> Result<(Corpus, Vec<drivefix_core::degrade::TrainingTriplet>)> {
    require_dir(data)?;
    let index = data.join(TRIPLET_INDEX);
    let triplets = read_triplet_index(&index)?;
    if let Some(t) = triplets.iter().find(|t| t.history.len() != history) {
        return Err(Error::shape("triplet history length", history, t.history.len()));
    }
    Ok((Corpus::load(data)?, triplets))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let start = Instant::now();
    let preset = Preset::from(a.preset).config();
    let defaults = TrainFile {
        model: preset.model,
        train: preset.train,
    };
    let mut flags = Flags::default();
    flags
        .set("train.stage1_steps", a.steps)
        .set("train.lr", a.lr)
        .set("train.warmup_steps", a.warmup)
        .set("train.batch_size", a.batch_size)
        .set("train.seed", a.seed)
        .set("train.checkpoint_every", a.checkpoint_every);
    let mut cfg: TrainFile = resolve(&defaults, a.config.as_deref(), flags)?;
    let resume = match &a.resume {
        Some(dir) => {
            let (state, _, manifest) = load_state(dir)?;
            cfg.model = manifest.model;
            Some(state)
        }
        None => None,
    };
    cfg.model.validate()?;
    cfg.train.validate()?;
    let config = log_resolved("train", &cfg);
    let (corpus, triplets) = load_training_data(&a.data, cfg.model.history)?;
    let mut trainer = Trainer::with_triplets(&corpus, &cfg.model, &cfg.train, Some(&a.out), triplets)?;
    let mut state = match resume {
        Some(s) => s,
        None => trainer.init_state()?,
    };
    info!("{} triplets, {} parameters", trainer.num_triplets(), state.model.num_parameters());
    let logs = trainer.stage1(&mut state)?;
    if let Some(last) = logs.last() {
        info!("stage 1 done at step {} with loss {:.5}", last.step, last.total);
    }
    let mut m = RunManifest::new("train", config);
    m.seeds.insert("train".into(), cfg.train.seed);
    m.seeds.insert("model".into(), cfg.model.seed);
    m.seeds.insert("teacher".into(), cfg.train.teacher_seed);
    m.inputs.insert("data".into(), tree_digest(&a.data)?);
    if let Some(r) = &a.resume {
        m.inputs.insert("resume".into(), tree_digest(r)?);
    }
    m.finish(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}

pub fn finetune(a: FinetuneArgs) -> Result<()> {
    let start = Instant::now();
    require_dir(&a.from)?;
    let (mut state, saved, manifest) = load_state(&a.from)?;
    let mut flags = Flags::default();
    flags
        .set("stage2_steps", a.steps)
        .set("alignment.alpha", a.alpha)
        .set("alignment.beta", a.beta)
        .set("lr", a.lr);
    let cfg: TrainConfig = resolve(&saved, a.config.as_deref(), flags)?;
    cfg.validate()?;
    let config = log_resolved("finetune", &serde_json::json!({ "train": cfg, "sweep": a.sweep, "eval_steps": a.eval_steps }));
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.from.parent().unwrap_or(Path::new(".")).join("finetune"));
    let (corpus, triplets) = load_training_data(&a.data, manifest.model.history)?;
    let mut trainer = Trainer::with_triplets(&corpus, &manifest.model, &cfg, Some(&out), triplets)?;
    let mut m = RunManifest::new("finetune", config);
    match &a.eval_data {
        Some(eval_dir) => {
            let eval = Corpus::load(eval_dir)?;
            let restore = RestoreConfig {
                steps: a.eval_steps,
                ..RestoreConfig::for_model(&state.model)
            };
            restore.validate(&state.model)?;
            let sweep = sweep_stage2(&mut trainer, &mut state, cfg.alignment, &a.sweep, &eval, &restore)?;
            if let Some(b) = sweep.best_point() {
                info!("best sweep mark {} with psnr {:.3}", b.step, b.psnr);
            }
            let bundle = ReportBundle {
                reports: vec![evaluate_corrupted(&eval)],
                sweep: Some(sweep),
                ablation: None,
            };
            let dir = out.join("sweep_report");
            emit_report(&dir, &bundle.reports, bundle.sweep.as_ref(), None)?;
            write_json(&dir.join(RESULTS_JSON), &bundle)?;
            m.inputs.insert("eval_data".into(), tree_digest(eval_dir)?);
            m.seeds.insert("restore".into(), restore.seed);
        }
        None => {
            trainer.stage2(&mut state, cfg.alignment, &a.sweep, &mut |_, _| Ok(()))?;
        }
    }
    m.seeds.insert("train".into(), cfg.seed);
    m.inputs.insert("from".into(), tree_digest(&a.from)?);
    m.inputs.insert("data".into(), tree_digest(&a.data)?);
    m.finish(&out, start.elapsed().as_secs_f64())?;
    Ok(())
}

/// Degraded scene directories to restore, each with its output directory.
fn restore_jobs(input: &Path, out: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let degraded = |d: &Path| {
        let sub = d.join(DEGRADED_DIR);
        if sub.join("meta.json").is_file() {
            sub
        } else {
            d.to_path_buf()
        }
    };
    if input.join("meta.json").is_file() {
        return Ok(vec![(degraded(input), out.to_path_buf())]);
    }
    Ok(scene_dirs(input)?
        .into_iter()
        .map(|d| {
            let name = d.file_name().expect("scene dirs have names").to_os_string();
            (degraded(&d), out.join(name))
        })
        .collect())
}

pub fn restore(a: RestoreArgs) -> Result<()> {
    let start = Instant::now();
    require_dir(&a.ckpt)?;
    require_dir(&a.input)?;
    let (model, cman): (Denoiser<f32>, _) = load_checkpoint(&a.ckpt)?;
    let mut flags = Flags::default();
    flags
        .set("steps", a.steps)
        .set("history", a.history)
        .set("seed", a.seed)
        .set("chunk", a.chunk)
        .set("cold_start", a.cold_start.map(drivefix_core::restorer::ColdStart::from));
    let cfg: RestoreConfig = resolve(&RestoreConfig::for_model(&model), None, flags)?;
    cfg.validate(&model)?;
    let config = log_resolved("restore", &cfg);
    let digest = cman.digest();
    let jobs = restore_jobs(&a.input, &a.out)?;
    for (src, dst) in &jobs {
        let (seq, meta) = read_sequence(src)?;
        let input = SequenceInput {
            corrupted: &seq,
            guidance: &seq,
            far_plane: meta.scene_config.far_plane,
        };
        let restored = restore_sequence(&model, &input, &cfg)?;
        let provenance = RestoreProvenance {
            checkpoint_digest: digest.clone(),
            restore_config: cfg.clone(),
            source: src.display().to_string(),
        };
        emit_pseudo_gt(&restored, &meta, dst, &provenance)?;
        validate_layout(dst)?;
        info!("restored {} into {}", meta.scene_id, dst.display());
    }
    let mut m = RunManifest::new("restore", config);
    m.seeds.insert("restore".into(), cfg.seed);
    m.inputs.insert("checkpoint".into(), digest);
    m.inputs.insert("input".into(), tree_digest(&a.input)?);
    m.finish(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}

fn write_bundle(out: &Path, bundle: &ReportBundle) -> Result<()> {
    let files = emit_report(out, &bundle.reports, bundle.sweep.as_ref(), bundle.ablation.as_ref())?;
    write_json(&out.join(RESULTS_JSON), bundle)?;
    info!("report digest {}", files.digest);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let start = Instant::now();
    let mut gt_by_id = BTreeMap::new();
    for d in scene_dirs(&a.gt)? {
        let meta: drivefix_core::dataset::SequenceMeta = read_json(&d.join("meta.json"))?;
        gt_by_id.insert(meta.scene_id, d);
    }
    let mut restored = Vec::new();
    let mut corrupted = Vec::new();
    let mut with_degraded = true;
    for d in scene_dirs(&a.restored)? {
        let (pred, pmeta) = read_sequence(&d)?;
        let gdir = gt_by_id
            .get(&pmeta.scene_id)
            .ok_or_else(|| Error::MissingInput(a.gt.join(&pmeta.scene_id)))?;
        let (gt, gmeta) = read_sequence(gdir)?;
        if (pred.timesteps(), pred.num_views(), pred.height, pred.width) != (gt.timesteps(), gt.num_views(), gt.height, gt.width) {
            return Err(Error::shape(
                format!("restored scene {}", pmeta.scene_id),
                format!("T{} K{} {}x{}", gt.timesteps(), gt.num_views(), gt.height, gt.width),
                format!("T{} K{} {}x{}", pred.timesteps(), pred.num_views(), pred.height, pred.width),
            ));
        }
        let scene = generate_scene(&gmeta.scene_config, gmeta.seed)?;
        restored.push(evaluate_sequence(&pmeta.scene_id, &pred, &gt, &scene, 0.0));
        let dg = gdir.join(DEGRADED_DIR);
        if with_degraded && dg.join("meta.json").is_file() {
            let (deg, _) = read_sequence(&dg)?;
            corrupted.push(evaluate_sequence(&pmeta.scene_id, &deg, &gt, &scene, 0.0));
        } else {
            with_degraded = false;
        }
    }
    let mut reports = Vec::new();
    if with_degraded && !corrupted.is_empty() {
        reports.push(MetricReport::new("corrupted", corrupted));
    }
    reports.push(MetricReport::new(a.label.clone(), restored));
    for r in &reports {
        info!(
            "{}: psnr {:.3} ssim {:.4} flicker {:?} cross-view {:?}",
            r.label, r.aggregate.psnr, r.aggregate.ssim, r.aggregate.flicker, r.aggregate.cross_view
        );
    }
    let bundle = ReportBundle {
        reports,
        ..ReportBundle::default()
    };
    write_bundle(&a.out, &bundle)?;
    let mut m = RunManifest::new("eval", serde_json::json!({ "label": a.label }));
    m.inputs.insert("restored".into(), tree_digest(&a.restored)?);
    m.inputs.insert("gt".into(), tree_digest(&a.gt)?);
    m.finish(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let start = Instant::now();
    let mut flags = Flags::default();
    flags.set("seeds", (!a.seeds.is_empty()).then_some(a.seeds.clone()));
    let cfg: AblationConfig = resolve(&AblationConfig::small(), a.config.as_deref(), flags)?;
    let config = log_resolved("ablate", &cfg);
    create_dir(&a.out)?;
    let table = run_ablation_grid(&cfg, Some(&a.out.join("runs")))?;
    for c in &table.checks {
        info!("{}: {}/{} seeds (need {}) {}", c.name, c.wins, c.seeds, c.required, if c.pass { "pass" } else { "FAIL" });
    }
    let bundle = ReportBundle {
        ablation: Some(table),
        ..ReportBundle::default()
    };
    write_bundle(&a.out, &bundle)?;
    let mut m = RunManifest::new("ablate", config);
    for s in &cfg.seeds {
        m.seeds.insert(format!("seed_{s}"), *s);
    }
    m.seeds.insert("corpus".into(), cfg.corpus.seed);
    m.seeds.insert("eval".into(), cfg.eval.seed);
    m.seeds.insert("corruption".into(), cfg.corruption.seed);
    m.finish(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let start = Instant::now();
    let mut merged = ReportBundle::default();
    let mut m = RunManifest::new("report", serde_json::json!({ "from": a.from }));
    for (i, dir) in a.from.iter().enumerate() {
        let b: ReportBundle = read_json(&dir.join(RESULTS_JSON))?;
        merged.reports.extend(b.reports);
        if b.sweep.is_some() {
            merged.sweep = b.sweep;
        }
        if b.ablation.is_some() {
            merged.ablation = b.ablation;
        }
        m.inputs.insert(format!("from_{i}"), tree_digest(&dir.join(RESULTS_JSON))?);
    }
    write_bundle(&a.out, &merged)?;
    m.finish(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}
