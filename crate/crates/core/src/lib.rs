//! Multi-camera driving scene restoration.
//!
//! The crate covers the whole pipeline: a procedural multi-camera world,
//! a corruption simulator that produces paired training data, an interleaved
//! spatio-temporal diffusion transformer with manual backpropagation, the
//! training objectives and optimiser, autoregressive restoration, and the
//! evaluation harness.

pub mod corpus;
pub mod dataset;
pub mod degrade;
pub mod error;
pub mod evalkit;
pub mod manifest;
pub mod objectives;
pub mod presets;
pub mod restorer;
pub mod rng;
pub mod stdt;
pub mod synthworld;
pub mod trainer;

pub use error::{Error, Result};
