use nalgebra::Vector3;
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use crate::rng;
use crate::synthworld::{Camera, CameraRig};

/// Number of geometric quantities per token before projection.
pub const TEACHER_RAW: usize = 9;

/// Per-token teacher features with a validity mask (false for sky).
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherFeatures {
    pub features: Array2<f64>,
    pub mask: Vec<bool>,
}

/// Fixed random projection from the 9 raw geometric numbers to `c_geo`.
pub fn teacher_projection(seed: u64, c_geo: usize) -> Array2<f64> {
    let mut r = rng::stream(seed, "objectives/teacher");
    let std = 1.0 / (TEACHER_RAW as f64).sqrt();
    Array2::from_shape_simple_fn((TEACHER_RAW, c_geo), || {
        let z: f64 = StandardNormal.sample(&mut r);
        z * std
    })
}

fn point(cam: &Camera, depth: &Array2<f32>, i: usize, j: usize) -> Option<Vector3<f64>> {
    let z = depth[[i, j]] as f64;
    if !z.is_finite() || z <= 0.0 {
        return None;
    }
    let p = cam.intrinsics.unproject(j as f64 + 0.5, i as f64 + 0.5, z);
    Some(cam.cam_to_ego(&p))
}

/// Raw geometry at the centre pixel of every patch of camera `k`:
/// ego-frame point divided by the far plane, surface normal from depth
/// differences (oriented towards the camera), and the unit viewing ray.
/// `None` for patches whose centre or neighbours are sky.
pub fn patch_geometry(depth: &Array2<f32>, rig: &CameraRig, k: usize, patch: usize, far_plane: f64) -> Vec<Option<[f64; TEACHER_RAW]>> {
    let cam = &rig.cameras[k];
    let (h, w) = depth.dim();
    let mut out = Vec::with_capacity((h / patch) * (w / patch));
    for pr in 0..h / patch {
        for pc in 0..w / patch {
            let i = pr * patch + patch / 2;
            let j = pc * patch + patch / 2;
            let i0 = i.saturating_sub(1);
            let j0 = j.saturating_sub(1);
            let i1 = (i + 1).min(h - 1);
            let j1 = (j + 1).min(w - 1);
            let pts = (
                point(cam, depth, i, j),
                point(cam, depth, i, j0),
                point(cam, depth, i, j1),
                point(cam, depth, i0, j),
                point(cam, depth, i1, j),
            );
            let (Some(c), Some(l), Some(r), Some(u), Some(d)) = pts else {
                out.push(None);
                continue;
            };
            let origin = cam.translation;
            let ray = (c - origin).normalize();
            let mut n = (r - l).cross(&(d - u));
            if n.norm() < 1e-12 {
                out.push(None);
                continue;
            }
            n.normalize_mut();
            if n.dot(&ray) > 0.0 {
                n = -n;
            }
            let p = c / far_plane;
            out.push(Some([p.x, p.y, p.z, n.x, n.y, n.z, ray.x, ray.y, ray.z]));
        }
    }
    out
}

/// Teacher features for one camera frame, rows in patch order.
pub fn geometry_teacher(
    depth: &Array2<f32>,
    rig: &CameraRig,
    k: usize,
    patch: usize,
    far_plane: f64,
    projection: &Array2<f64>,
) -> TeacherFeatures {
    let raw = patch_geometry(depth, rig, k, patch, far_plane);
    let c_geo = projection.ncols();
    let mut features = Array2::zeros((raw.len(), c_geo));
    let mut mask = Vec::with_capacity(raw.len());
    for (row, g) in raw.iter().enumerate() {
        match g {
            Some(v) => {
                let x = ndarray::ArrayView1::from(&v[..]);
                features.row_mut(row).assign(&x.dot(projection));
                mask.push(true);
            }
            None => mask.push(false),
        }
    }
    TeacherFeatures { features, mask }
}
