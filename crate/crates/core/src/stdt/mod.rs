//! Interleaved spatio-temporal diffusion transformer.
//!
//! Tokens live in a [`LatentGrid`] of logical shape `B×V×T×N×C`. Each
//! [`InterleavedBlock`] runs history-conditioned temporal attention per
//! (batch, view), then cross-view attention per (batch, timestep), then a
//! point-wise MLP, all as pre-norm residual branches. Forward and backward
//! passes are written out by hand and are generic over [`Real`].

mod block;
pub mod checkpoint;
mod encoder;
mod grid;
mod model;
pub mod nn;
mod real;
mod smooth;

pub use block::{BlockCache, BlockSwitches, BlockTaps, InterleavedBlock};
pub use encoder::{
    patchify, sinusoid, spatial_encoding, tau_features, unpatchify, PatchEncoder, GEOMETRY_DIM, GUIDANCE_CHANNELS,
    PIXEL_CHANNELS,
};
pub use grid::{Layout, LatentGrid};
pub use model::{batch_slice, stack_batch, Denoiser, DenoiserCache, DenoiserInput, DenoiserOutput, HistoryInput, ModelConfig, OutputMode, TAU_FLOOR};
pub use real::Real;
pub use smooth::GaussianSmoother;
