//! Corruption simulator turning ground-truth renders into degraded inputs,
//! and the hybrid-history training triplet builder.
//!
//! [`corrupt_sequence`] applies the stages in a fixed order: extrinsic jitter
//! followed by a re-render with the perturbed rig, then temporal sparsity
//! ghosting, then per-camera radiometric mismatch. Each stage draws from its
//! own named stream and reports what it drew, so the [`CorruptionManifest`]
//! is enough to re-derive every degraded pixel.

mod jitter;
mod radiometric;
mod spec;
mod temporal;
mod triplet;

pub use jitter::{jitter_extrinsics, CameraJitter};
pub use radiometric::{degrade_radiometric, RadiometricDraw};
pub use spec::{CorruptionSpec, JitterSpec, RadiometricSpec, SparsityBand, TemporalSpec};
pub use temporal::{degrade_temporal, BlendRecord, TemporalRecord};
pub use triplet::{build_triplets, combo_id, HistorySlot, Provenance, TrainingTriplet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng;
use crate::synthworld::{render_views, CameraRig, MultiViewSequence, Scene};

/// Everything drawn while corrupting one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionManifest {
    pub spec: CorruptionSpec,
    pub stream_seed: u64,
    pub jitter: Vec<CameraJitter>,
    pub perturbed_rig: CameraRig,
    pub temporal: TemporalRecord,
    pub radiometric: Vec<RadiometricDraw>,
}

/// Corrupt the ground-truth render `gt` of `scene`.
///
/// The returned sequence carries the depth and semantics of the jittered
/// re-render, which is what a downstream restorer sees as guidance.
pub fn corrupt_sequence(
    scene: &Scene,
    gt: &MultiViewSequence,
    spec: &CorruptionSpec,
    stream_seed: u64,
) -> Result<(MultiViewSequence, CorruptionManifest)> {
    spec.validate()?;
    gt.validate()?;
    let (perturbed_rig, jitter) =
        jitter_extrinsics(&gt.rig, &spec.jitter, &mut rng::stream(stream_seed, "degrade/jitter"));
    let rerendered = if jitter.iter().all(CameraJitter::is_identity) {
        gt.clone()
    } else {
        let mut seq = render_views(scene, &perturbed_rig, (gt.height, gt.width))?;
        // Downstream consumers know the nominal rig, not the perturbed one.
        seq.rig = gt.rig.clone();
        seq
    };
    let (ghosted, temporal) = degrade_temporal(
        &rerendered,
        &spec.temporal,
        &mut rng::stream(stream_seed, "degrade/temporal"),
    )?;
    let (out, radiometric) = degrade_radiometric(
        &ghosted,
        &spec.radiometric,
        &mut rng::stream(stream_seed, "degrade/radiometric"),
    )?;
    let manifest = CorruptionManifest {
        spec: spec.clone(),
        stream_seed,
        jitter,
        perturbed_rig,
        temporal,
        radiometric,
    };
    Ok((out, manifest))
}
