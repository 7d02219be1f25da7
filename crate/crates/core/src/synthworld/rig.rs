use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels. Pixel centres sit on integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square-pixel intrinsics for a horizontal field of view in radians.
    pub fn from_hfov(hfov: f64, height: usize, width: usize) -> Self {
        let fx = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<(f64, f64)> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    /// Ray through pixel `(u, v)` with unit z component.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.ray(u, v) * depth
    }
}

/// Camera mounted on the ego vehicle. `rotation` and `translation` map camera
/// coordinates (x right, y down, z forward) into the ego frame (x forward,
/// y left, z up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    /// Camera looking along ego heading `yaw`, pitched down by `pitch`.
    pub fn mounted(intrinsics: Intrinsics, yaw: f64, pitch: f64, translation: Vector3<f64>) -> Self {
        // Columns: camera x, y, z axes expressed in the ego frame.
        let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), -pitch);
        let turn = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        Self {
            intrinsics,
            rotation: turn.matrix() * base * tilt.matrix(),
            translation,
        }
    }

    pub fn cam_to_ego(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn ego_to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }
}

/// Pose of the ego frame in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl EgoPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: Vector3::new(x, y, 0.0),
        }
    }

    pub fn ego_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn world_to_ego(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigPreset {
    /// Three forward cameras, 25 degrees apart.
    Frontal3,
    /// Six cameras covering the full circle.
    Surround6,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
    pub ego: Vec<EgoPose>,
}

impl CameraRig {
    pub fn preset(preset: RigPreset, height: usize, width: usize, ego: Vec<EgoPose>) -> Self {
        let deg = std::f64::consts::PI / 180.0;
        let mount = Vector3::new(1.5, 0.0, 1.6);
        let intr = Intrinsics::from_hfov(70.0 * deg, height, width);
        let yaws: &[f64] = match preset {
            RigPreset::Frontal3 => &[25.0, 0.0, -25.0],
            RigPreset::Surround6 => &[0.0, 55.0, 110.0, 180.0, -110.0, -55.0],
        };
        let cameras = yaws
            .iter()
            .map(|y| Camera::mounted(intr, y * deg, 4.0 * deg, mount))
            .collect();
        Self { cameras, ego }
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn timesteps(&self) -> usize {
        self.ego.len()
    }

    pub fn cam_to_world(&self, k: usize, t: usize, p: &Vector3<f64>) -> Vector3<f64> {
        self.ego[t].ego_to_world(&self.cameras[k].cam_to_ego(p))
    }

    pub fn world_to_cam(&self, k: usize, t: usize, p: &Vector3<f64>) -> Vector3<f64> {
        self.cameras[k].ego_to_cam(&self.ego[t].world_to_ego(p))
    }

    /// Largest deviation of `RᵀR` from identity over every rotation in the rig.
    pub fn orthonormality_error(&self) -> f64 {
        let rots = self
            .cameras
            .iter()
            .map(|c| c.rotation)
            .chain(self.ego.iter().map(|e| e.rotation));
        rots.map(|r| (r.transpose() * r - Matrix3::identity()).amax())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::config("camera rig has no cameras"));
        }
        let err = self.orthonormality_error();
        if !(err < 1e-6) {
            return Err(Error::config(format!("rig rotation not orthonormal ({err:e})")));
        }
        Ok(())
    }

    /// The 16 numbers describing camera `k`: row-major rotation, translation,
    /// and intrinsics normalised by the image size.
    pub fn geometry_vector(&self, k: usize, height: usize, width: usize) -> [f64; 16] {
        let c = &self.cameras[k];
        let mut out = [0.0; 16];
        for r in 0..3 {
            for col in 0..3 {
                out[r * 3 + col] = c.rotation[(r, col)];
            }
        }
        out[9] = c.translation.x;
        out[10] = c.translation.y;
        out[11] = c.translation.z;
        out[12] = c.intrinsics.fx / width as f64;
        out[13] = c.intrinsics.fy / height as f64;
        out[14] = c.intrinsics.cx / width as f64;
        out[15] = c.intrinsics.cy / height as f64;
        out
    }
}
