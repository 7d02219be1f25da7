//! Named bundles of corpus, model, training and sampler settings.

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::restorer::RestoreConfig;
use crate::stdt::ModelConfig;
use crate::synthworld::SceneConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Seconds-scale smoke runs.
    Tiny,
    /// Single-machine runs at 64×64 with the reduced step counts.
    Desk,
    /// Full step counts and optimiser settings.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub restore: RestoreConfig,
}

impl Preset {
    pub fn config(self) -> PresetConfig {
        match self {
            Preset::Tiny => PresetConfig {
                corpus: CorpusConfig {
                    scenes: 2,
                    height: 16,
                    width: 16,
                    scene: SceneConfig {
                        timesteps: 6,
                        ..SceneConfig::default()
                    },
                    ..CorpusConfig::default()
                },
                model: ModelConfig {
                    channels: 16,
                    blocks: 2,
                    heads: 2,
                    patch: 4,
                    geo_channels: 8,
                    ..ModelConfig::default()
                },
                train: TrainConfig {
                    stage1_steps: 50,
                    stage2_steps: 10,
                    lr: 1e-3,
                    warmup_steps: 5,
                    batch_size: 2,
                    checkpoint_every: 25,
                    ..TrainConfig::default()
                },
                restore: RestoreConfig {
                    steps: 2,
                    ..RestoreConfig::default()
                },
            },
            Preset::Desk => PresetConfig {
                corpus: CorpusConfig::default(),
                model: desk_model(),
                train: desk_train(),
                restore: desk_restore(),
            },
            Preset::Full => PresetConfig {
                corpus: CorpusConfig::default(),
                model: ModelConfig::default(),
                train: TrainConfig::full_scale(),
                restore: RestoreConfig::default(),
            },
        }
    }
}

/// Model used for desk-scale runs.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        channels: 64,
        blocks: 4,
        heads: 4,
        ..ModelConfig::default()
    }
}

/// Desk-scale schedule: 4,000 + 300 steps with warmup 50.
pub fn desk_train() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

/// Desk-scale sampler: one Euler step, which returns the clean estimate.
pub fn desk_restore() -> RestoreConfig {
    RestoreConfig {
        steps: 1,
        ..RestoreConfig::default()
    }
}
