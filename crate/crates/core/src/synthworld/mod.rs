//! Procedural driving scenes and a pinhole renderer with exact depth and
//! semantic ground truth.

mod render;
mod rig;
mod scene;
mod sequence;

pub use render::{render_frame, render_views, RenderedView};
pub use rig::{Camera, CameraRig, EgoPose, Intrinsics, RigPreset};
pub use scene::{
    generate_scene, ego_trajectory, Ground, ObjectKind, Pose2, Scene, SceneConfig, SceneObject,
    Texture,
};
pub use sequence::MultiViewSequence;

/// Semantic id of sky pixels.
pub const SEM_SKY: u8 = 0;
/// Semantic id of ground pixels.
pub const SEM_GROUND: u8 = 1;
/// Objects are labelled `SEM_OBJECT_BASE + index`.
pub const SEM_OBJECT_BASE: u8 = 2;
