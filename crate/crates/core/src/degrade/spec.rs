use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    /// Standard deviation of the rotation angle, radians.
    pub sigma_rot: f64,
    /// Standard deviation of each translation component, metres.
    pub sigma_trans: f64,
}

/// Timesteps in `[start, end)` keep every `keep_every`-th frame
/// (`t % keep_every == 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityBand {
    pub start: usize,
    pub end: usize,
    pub keep_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSpec {
    /// Timesteps outside every band are kept.
    pub bands: Vec<SparsityBand>,
    /// Range of the weight given to the earlier kept frame in a ghost blend.
    pub ghost_weight: (f64, f64),
    /// Gaussian blur applied to kept frames, pixels.
    pub kept_blur_sigma: f64,
    /// When set, frames with `t % holdout_every == 0` are never kept: they
    /// play the role of views a reconstruction never trained on.
    #[serde(default)]
    pub holdout_every: Option<usize>,
}

impl TemporalSpec {
    pub fn keep_every(&self, t: usize) -> usize {
        self.bands
            .iter()
            .find(|b| (b.start..b.end).contains(&t))
            .map_or(1, |b| b.keep_every)
    }

    pub fn is_kept(&self, t: usize) -> bool {
        if let Some(m) = self.holdout_every {
            if t.is_multiple_of(m) {
                return false;
            }
        }
        t.is_multiple_of(self.keep_every(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiometricSpec {
    pub gain: (f64, f64),
    pub offset: (f64, f64),
    /// Per-channel white-balance multiplier range.
    pub white_balance: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub jitter: JitterSpec,
    pub temporal: TemporalSpec,
    pub radiometric: RadiometricSpec,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            jitter: JitterSpec {
                sigma_rot: 0.015,
                sigma_trans: 0.15,
            },
            temporal: TemporalSpec {
                bands: vec![
                    SparsityBand { start: 0, end: 8, keep_every: 1 },
                    SparsityBand { start: 8, end: 16, keep_every: 2 },
                    SparsityBand { start: 16, end: 24, keep_every: 3 },
                ],
                ghost_weight: (0.3, 0.7),
                kept_blur_sigma: 0.6,
                holdout_every: Some(5),
            },
            radiometric: RadiometricSpec {
                gain: (0.75, 1.25),
                offset: (-0.06, 0.06),
                white_balance: (0.88, 1.12),
            },
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    /// The spec whose every stage is an exact identity.
    pub fn identity() -> Self {
        Self {
            jitter: JitterSpec {
                sigma_rot: 0.0,
                sigma_trans: 0.0,
            },
            temporal: TemporalSpec {
                bands: Vec::new(),
                ghost_weight: (0.0, 0.0),
                kept_blur_sigma: 0.0,
                holdout_every: None,
            },
            radiometric: RadiometricSpec {
                gain: (1.0, 1.0),
                offset: (0.0, 0.0),
                white_balance: (1.0, 1.0),
            },
            seed: 0,
        }
    }

    /// Per-scene stream seed derived from the spec seed.
    pub fn scene_seed(&self, scene_id: &str) -> u64 {
        rng::child_seed(self.seed, scene_id)
    }

    pub fn validate(&self) -> Result<()> {
        let j = &self.jitter;
        if !(j.sigma_rot >= 0.0 && j.sigma_rot.is_finite() && j.sigma_trans >= 0.0 && j.sigma_trans.is_finite()) {
            return Err(Error::config("jitter sigmas must be finite and non-negative"));
        }
        let ordered = |name: &str, r: (f64, f64)| {
            if r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} range must be finite and ordered")))
            }
        };
        let tp = &self.temporal;
        ordered("ghost_weight", tp.ghost_weight)?;
        if tp.ghost_weight.0 < 0.0 || tp.ghost_weight.1 > 1.0 {
            return Err(Error::config("ghost_weight must lie in [0, 1]"));
        }
        if !(tp.kept_blur_sigma >= 0.0 && tp.kept_blur_sigma.is_finite()) {
            return Err(Error::config("kept_blur_sigma must be finite and non-negative"));
        }
        if tp.bands.iter().any(|b| b.keep_every == 0 || b.start > b.end) {
            return Err(Error::config("sparsity bands need keep_every >= 1 and start <= end"));
        }
        if tp.holdout_every == Some(0) {
            return Err(Error::config("holdout_every must be positive"));
        }
        let r = &self.radiometric;
        ordered("gain", r.gain)?;
        ordered("offset", r.offset)?;
        ordered("white_balance", r.white_balance)?;
        Ok(())
    }
}

/// Uniform draw on `[lo, hi]` that is exact when the range is a point.
pub(crate) fn uniform(rng: &mut impl rand::Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        range.0 + (range.1 - range.0) * rng.random::<f64>()
    }
}
