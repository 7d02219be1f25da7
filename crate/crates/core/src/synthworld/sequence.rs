use ndarray::{Array2, Array3};

use super::rig::CameraRig;
use crate::error::{Error, Result};

/// Frames, depth and semantics indexed `[t][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSequence {
    pub height: usize,
    pub width: usize,
    /// `H×W×3` images in `[0, 1]`.
    pub frames: Vec<Vec<Array3<f32>>>,
    /// Distance along the camera z axis; `+∞` for sky.
    pub depth: Vec<Vec<Array2<f32>>>,
    pub semantic: Vec<Vec<Array2<u8>>>,
    pub rig: CameraRig,
}

impl MultiViewSequence {
    pub fn timesteps(&self) -> usize {
        self.frames.len()
    }

    pub fn num_views(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    pub fn validate(&self) -> Result<()> {
        let (t_len, k_len) = (self.timesteps(), self.num_views());
        if t_len == 0 || k_len == 0 {
            return Err(Error::shape("sequence", "T, K > 0", format!("T={t_len}, K={k_len}")));
        }
        if self.depth.len() != t_len || self.semantic.len() != t_len {
            return Err(Error::shape("sequence timesteps", t_len, self.depth.len().min(self.semantic.len())));
        }
        if self.rig.num_cameras() != k_len {
            return Err(Error::shape("rig cameras", k_len, self.rig.num_cameras()));
        }
        for t in 0..t_len {
            for (name, n) in [
                ("frames", self.frames[t].len()),
                ("depth", self.depth[t].len()),
                ("semantic", self.semantic[t].len()),
            ] {
                if n != k_len {
                    return Err(Error::shape(format!("{name}[{t}] views"), k_len, n));
                }
            }
            for k in 0..k_len {
                let f = &self.frames[t][k];
                if f.dim() != (self.height, self.width, 3) {
                    return Err(Error::shape(format!("frame[{t}][{k}]"), format!("{:?}", (self.height, self.width, 3)), format!("{:?}", f.dim())));
                }
                if self.depth[t][k].dim() != (self.height, self.width) {
                    return Err(Error::shape(format!("depth[{t}][{k}]"), format!("{:?}", (self.height, self.width)), format!("{:?}", self.depth[t][k].dim())));
                }
                if self.semantic[t][k].dim() != (self.height, self.width) {
                    return Err(Error::shape(format!("semantic[{t}][{k}]"), format!("{:?}", (self.height, self.width)), format!("{:?}", self.semantic[t][k].dim())));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { stage: format!("frame[{t}][{k}]") });
                }
                if self.depth[t][k].iter().any(|&d| !(d > 0.0)) {
                    return Err(Error::config(format!("depth[{t}][{k}] has non-positive values")));
                }
            }
        }
        Ok(())
    }

    /// Copy with the frames replaced; geometry channels are kept.
    pub fn with_frames(&self, frames: Vec<Vec<Array3<f32>>>) -> Self {
        Self {
            frames,
            ..self.clone()
        }
    }
}
