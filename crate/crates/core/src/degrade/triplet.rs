use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthworld::MultiViewSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "GT")]
    Gt,
    #[serde(rename = "DG")]
    Dg,
}

/// One history slot: all K views of timestep `t` taken from the ground-truth
/// or degraded sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistorySlot {
    pub t: usize,
    pub provenance: Provenance,
}

/// {hybrid history, corrupted current, ground-truth current} for all K views
/// of one scene at timestep `t`. History slots are ordered oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriplet {
    pub scene_id: String,
    pub t: usize,
    pub combo_id: u32,
    pub history: Vec<HistorySlot>,
}

/// Combination index of a provenance pattern (oldest slot first). Reading
/// the slots as bits with GT = 1 and the oldest slot most significant gives
/// {DG,DG}=0, {DG,GT}=1, {GT,DG}=2, {GT,GT}=3 for two slots.
pub fn combo_id(pattern: &[Provenance]) -> u32 {
    pattern
        .iter()
        .fold(0, |acc, p| (acc << 1) | u32::from(*p == Provenance::Gt))
}

fn pattern_of(combo: u32, h: usize) -> Vec<Provenance> {
    (0..h)
        .map(|slot| {
            let bit = (combo >> (h - 1 - slot)) & 1;
            if bit == 1 {
                Provenance::Gt
            } else {
                Provenance::Dg
            }
        })
        .collect()
}

/// Expand every eligible timestep `t ∈ [h, T)` into `2^h` triplets, one per
/// history provenance pattern.
pub fn build_triplets(
    scene_id: &str,
    gt: &MultiViewSequence,
    dg: &MultiViewSequence,
    h: usize,
) -> Result<Vec<TrainingTriplet>> {
    if gt.timesteps() != dg.timesteps() || gt.num_views() != dg.num_views() {
        return Err(Error::shape(
            "degraded sequence (T, K)",
            format!("({}, {})", gt.timesteps(), gt.num_views()),
            format!("({}, {})", dg.timesteps(), dg.num_views()),
        ));
    }
    if h >= 31 {
        return Err(Error::config("history length too large"));
    }
    let t_len = gt.timesteps();
    if t_len <= h {
        return Ok(Vec::new());
    }
    let combos = 1u32 << h;
    let mut out = Vec::with_capacity((t_len - h) * combos as usize);
    for t in h..t_len {
        for combo in 0..combos {
            let history = pattern_of(combo, h)
                .into_iter()
                .enumerate()
                .map(|(slot, provenance)| HistorySlot {
                    t: t - h + slot,
                    provenance,
                })
                .collect();
            out.push(TrainingTriplet {
                scene_id: scene_id.to_string(),
                t,
                combo_id: combo,
                history,
            });
        }
    }
    Ok(out)
}
