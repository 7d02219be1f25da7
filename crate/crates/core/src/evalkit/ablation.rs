use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{evaluate_model, Aggregate, MetricReport};
use crate::corpus::{Corpus, CorpusConfig};
use crate::degrade::CorruptionSpec;
use crate::error::{Error, Result};
use crate::objectives::AlignmentWeights;
use crate::restorer::RestoreConfig;
use crate::stdt::ModelConfig;
use crate::synthworld::SceneConfig;
use crate::trainer::{TrainConfig, Trainer};

/// Rows of the ablation table, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoCrossView,
    NoTemporal,
    NoHistory,
    NoAlignment,
    NoGuidance,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::NoCrossView,
        Variant::NoTemporal,
        Variant::NoHistory,
        Variant::NoAlignment,
        Variant::NoGuidance,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::NoCrossView => "w/o Cross-View Attention",
            Variant::NoTemporal => "w/o Temporal Attention",
            Variant::NoHistory => "w/o Historical Context",
            Variant::NoAlignment => "w/o Alignment Loss",
            Variant::NoGuidance => "w/o Depth and Semantic",
            Variant::Full => "Full model",
        }
    }

    /// The variant's model config and stage-2 weights, derived from the
    /// full configuration by flipping one switch.
    pub fn apply(self, model: &ModelConfig, weights: AlignmentWeights) -> VariantConfig {
        let mut v = VariantConfig {
            model: model.clone(),
            alignment: weights,
        };
        match self {
            Variant::NoCrossView => v.model.spatial_attention = false,
            Variant::NoTemporal => v.model.temporal_attention = false,
            Variant::NoHistory => v.model.history = 0,
            Variant::NoAlignment => v.alignment = AlignmentWeights::OFF,
            Variant::NoGuidance => v.model.use_guidance = false,
            Variant::Full => {}
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub model: ModelConfig,
    pub alignment: AlignmentWeights,
}

fn leaves(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(&p, x, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

/// Dotted paths of every field whose value differs between `a` and `b`.
pub fn config_diff(a: &VariantConfig, b: &VariantConfig) -> Vec<String> {
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    leaves("", &serde_json::to_value(a).expect("serialisable"), &mut la);
    leaves("", &serde_json::to_value(b).expect("serialisable"), &mut lb);
    let mut out: Vec<String> = la
        .iter()
        .filter(|(k, v)| lb.iter().find(|(kb, _)| kb == k).map(|(_, vb)| vb) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    out.extend(lb.iter().filter(|(k, _)| !la.iter().any(|(ka, _)| ka == k)).map(|(k, _)| k.clone()));
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
    pub eval: CorpusConfig,
    pub corruption: CorruptionSpec,
    /// Sampler settings; the history length always follows the variant.
    pub restore: RestoreConfig,
    pub seeds: Vec<u64>,
}

impl AblationConfig {
    /// Small preset sized for a single CPU core.
    pub fn small() -> Self {
        let scene = SceneConfig {
            timesteps: 12,
            ..SceneConfig::default()
        };
        Self {
            model: ModelConfig {
                channels: 48,
                blocks: 2,
                heads: 4,
                patch: 4,
                geo_channels: 32,
                residual_smoothing: 1.5,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                stage1_steps: 2000,
                stage2_steps: 150,
                lr: 1e-3,
                warmup_steps: 30,
                batch_size: 4,
                checkpoint_every: 0,
                ..TrainConfig::default()
            },
            corpus: CorpusConfig {
                scenes: 8,
                scene: scene.clone(),
                height: 32,
                width: 32,
                ..CorpusConfig::default()
            },
            eval: CorpusConfig {
                scenes: 4,
                first_scene: 1000,
                scene,
                height: 32,
                width: 32,
                ..CorpusConfig::default()
            },
            corruption: CorruptionSpec::default(),
            restore: RestoreConfig {
                steps: 1,
                ..RestoreConfig::default()
            },
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    /// Fields changed relative to the full model.
    pub changed: Vec<String>,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Aggregate>,
    pub mean: Aggregate,
}

/// Whether the full model beats a variant on one metric, per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCheck {
    pub name: String,
    pub variant: Variant,
    pub metric: String,
    pub wins: usize,
    pub seeds: usize,
    pub required: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub checks: Vec<DirectionalCheck>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }
}

fn mean_aggregate(xs: &[Aggregate]) -> Aggregate {
    let n = xs.len() as f64;
    let m = |f: &dyn Fn(&Aggregate) -> f64| xs.iter().map(f).sum::<f64>() / n;
    let mo = |f: &dyn Fn(&Aggregate) -> Option<f64>| {
        let v: Vec<f64> = xs.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Aggregate {
        psnr: m(&|a| a.psnr),
        ssim: m(&|a| a.ssim),
        psnr_interp: m(&|a| a.psnr_interp),
        psnr_recon: m(&|a| a.psnr_recon),
        cross_view: mo(&|a| a.cross_view),
        flicker: mo(&|a| a.flicker),
        seconds: m(&|a| a.seconds),
    }
}

/// Lower-is-better metrics compare with `<`, PSNR with `>`.
fn checks(rows: &[AblationRow]) -> Vec<DirectionalCheck> {
    let full = rows.iter().find(|r| r.variant == Variant::Full).expect("full row");
    let mut specs: Vec<(Variant, &str)> = vec![
        (Variant::NoCrossView, "cross_view"),
        (Variant::NoTemporal, "flicker"),
        (Variant::NoHistory, "flicker"),
    ];
    specs.extend(Variant::ALL.iter().filter(|v| **v != Variant::Full).map(|v| (*v, "psnr_interp")));
    specs
        .into_iter()
        .map(|(variant, metric)| {
            let other = rows.iter().find(|r| r.variant == variant).expect("variant row");
            let wins = full
                .per_seed
                .iter()
                .zip(&other.per_seed)
                .filter(|(f, o)| match metric {
                    "cross_view" => matches!((f.cross_view, o.cross_view), (Some(a), Some(b)) if a < b),
                    "flicker" => matches!((f.flicker, o.flicker), (Some(a), Some(b)) if a < b),
                    _ => f.psnr_interp > o.psnr_interp,
                })
                .count();
            let seeds = full.per_seed.len();
            let required = (2 * seeds).div_ceil(3);
            DirectionalCheck {
                name: format!("full vs {}: {metric}", variant.label()),
                variant,
                metric: metric.to_string(),
                wins,
                seeds,
                required,
                pass: wins >= required,
            }
        })
        .collect()
}

/// Train and evaluate every variant for every seed. Each run trains stage 1
/// and stage 2 from scratch with the seed applied to initialisation, data
/// order, noise and sampling. When `out` is given each run's training log
/// goes to `out/<variant>/seed_<s>/`.
pub fn run_ablation_grid(cfg: &AblationConfig, out: Option<&Path>) -> Result<AblationTable> {
    if cfg.seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    let train = Corpus::generate(&cfg.corpus, &cfg.corruption)?;
    let eval = Corpus::generate(&cfg.eval, &cfg.corruption)?;
    let full = Variant::Full.apply(&cfg.model, cfg.train.alignment);
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let vc = variant.apply(&cfg.model, cfg.train.alignment);
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            let model = ModelConfig { seed, ..vc.model.clone() };
            let tc = TrainConfig {
                seed,
                alignment: vc.alignment,
                ..cfg.train.clone()
            };
            let dir = out.map(|o| o.join(format!("{variant:?}").to_lowercase()).join(format!("seed_{seed}")));
            let mut trainer = Trainer::new(&train, &model, &tc, dir.as_deref())?;
            let mut state = trainer.init_state()?;
            trainer.stage1(&mut state)?;
            trainer.stage2(&mut state, vc.alignment, &[], &mut |_, _| Ok(()))?;
            let restore = RestoreConfig {
                history: model.history,
                chunk: model.t_cur,
                seed,
                ..cfg.restore.clone()
            };
            let rep: MetricReport = evaluate_model(variant.label(), &state.model, &eval, &restore)?;
            info!(
                "{} seed {seed}: psnr {:.2} interp {:.2} flicker {:?} cross-view {:?}",
                variant.label(),
                rep.aggregate.psnr,
                rep.aggregate.psnr_interp,
                rep.aggregate.flicker,
                rep.aggregate.cross_view
            );
            per_seed.push(rep.aggregate);
        }
        rows.push(AblationRow {
            variant,
            label: variant.label().to_string(),
            changed: config_diff(&full, &vc),
            seeds: cfg.seeds.clone(),
            mean: mean_aggregate(&per_seed),
            per_seed,
        });
    }
    let checks = checks(&rows);
    Ok(AblationTable { rows, checks })
}
