use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use rayon::prelude::*;

use super::rig::CameraRig;
use super::scene::{ObjectKind, Pose2, Scene, SceneObject};
use super::sequence::MultiViewSequence;
use super::{SEM_GROUND, SEM_OBJECT_BASE, SEM_SKY};
use crate::error::{Error, Result};

const NEAR: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct RenderedView {
    pub rgb: Array3<f32>,
    pub depth: Array2<f32>,
    pub semantic: Array2<u8>,
}

/// Planar rectangle in world coordinates.
struct Quad {
    origin: Vector3<f64>,
    /// Unit edge directions and their lengths.
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    len1: f64,
    len2: f64,
    normal: Vector3<f64>,
    shade: f32,
}

fn object_quads(obj: &SceneObject, pose: &Pose2) -> Vec<Quad> {
    let [l, w, h] = obj.size;
    let (c, s) = (pose.yaw.cos(), pose.yaw.sin());
    let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let centre = Vector3::new(pose.x, pose.y, 0.0);
    let to_world = |p: Vector3<f64>| rot * p + centre;
    let (hl, hw) = (l / 2.0, w / 2.0);
    let x = rot * Vector3::x();
    let y = rot * Vector3::y();
    let z = Vector3::z();
    // (origin in local frame, e1, e2, len1, len2, normal, shade)
    let faces = [
        (Vector3::new(hl, -hw, 0.0), y, z, w, h, x, 0.9f32),
        (Vector3::new(-hl, hw, 0.0), -y, z, w, h, -x, 0.75),
        (Vector3::new(-hl, hw, 0.0), x, z, l, h, y, 0.82),
        (Vector3::new(hl, -hw, 0.0), -x, z, l, h, -y, 0.68),
        (Vector3::new(-hl, -hw, h), x, y, l, w, z, 1.0),
    ];
    faces
        .into_iter()
        .map(|(o, e1, e2, len1, len2, normal, shade)| Quad {
            origin: to_world(o),
            e1,
            e2,
            len1,
            len2,
            normal,
            shade,
        })
        .collect()
}

/// Render one camera at one timestep.
pub fn render_frame(scene: &Scene, rig: &CameraRig, k: usize, t: usize, height: usize, width: usize) -> RenderedView {
    let cam = &rig.cameras[k];
    let ego = &rig.ego[t];
    let r_wc = ego.rotation * cam.rotation;
    let t_wc = ego.rotation * cam.translation + ego.translation;
    let r_cw = r_wc.transpose();
    let intr = &cam.intrinsics;
    let far = scene.config.far_plane;

    let mut rgb = Array3::<f32>::zeros((height, width, 3));
    let mut depth = Array2::<f32>::from_elem((height, width), f32::INFINITY);
    let mut semantic = Array2::<u8>::from_elem((height, width), SEM_SKY);
    let mut zbuf = Array2::<f64>::from_elem((height, width), f64::INFINITY);
    for i in 0..height {
        for j in 0..width {
            for c in 0..3 {
                rgb[[i, j, c]] = scene.sky_color[c];
            }
        }
    }

    // Ground plane z = 0, rasterised per pixel.
    let n_c = r_cw * Vector3::z();
    let offset = -t_wc.z;
    let extent = scene.ground.extent;
    for i in 0..height {
        for j in 0..width {
            let d = intr.ray(j as f64, i as f64);
            let denom = n_c.dot(&d);
            if denom.abs() < 1e-12 {
                continue;
            }
            let s = offset / denom;
            if s <= NEAR || s > far || s >= zbuf[[i, j]] {
                continue;
            }
            let p = r_wc * (d * s) + t_wc;
            if p.x.abs() > extent || p.y.abs() > extent {
                continue;
            }
            zbuf[[i, j]] = s;
            let col = scene.ground.texture.sample(scene.ground.color, p.x, p.y);
            for c in 0..3 {
                rgb[[i, j, c]] = col[c];
            }
            semantic[[i, j]] = SEM_GROUND;
        }
    }

    for (idx, obj) in scene.objects.iter().enumerate() {
        let label = SEM_OBJECT_BASE + idx as u8;
        for quad in object_quads(obj, &obj.trajectory[t]) {
            // Bring the quad into camera coordinates.
            let o = r_cw * (quad.origin - t_wc);
            let e1 = r_cw * quad.e1;
            let e2 = r_cw * quad.e2;
            let n = r_cw * quad.normal;
            if n.dot(&o) >= 0.0 {
                continue; // back face
            }
            let corners = [o, o + e1 * quad.len1, o + e2 * quad.len2, o + e1 * quad.len1 + e2 * quad.len2];
            if corners.iter().all(|c| c.z <= NEAR) {
                continue;
            }
            let (mut i0, mut i1, mut j0, mut j1) = (0usize, height, 0usize, width);
            if corners.iter().all(|c| c.z > NEAR) {
                let (mut umin, mut umax, mut vmin, mut vmax) =
                    (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                for c in &corners {
                    let (u, v) = intr.project(c).expect("in front of camera");
                    umin = umin.min(u);
                    umax = umax.max(u);
                    vmin = vmin.min(v);
                    vmax = vmax.max(v);
                }
                if umax < 0.0 || vmax < 0.0 || umin > (width - 1) as f64 || vmin > (height - 1) as f64 {
                    continue;
                }
                j0 = umin.floor().max(0.0) as usize;
                j1 = ((umax.ceil() as usize) + 1).min(width);
                i0 = vmin.floor().max(0.0) as usize;
                i1 = ((vmax.ceil() as usize) + 1).min(height);
            }
            let plane = n.dot(&o);
            for i in i0..i1 {
                for j in j0..j1 {
                    let d = intr.ray(j as f64, i as f64);
                    let denom = n.dot(&d);
                    if denom.abs() < 1e-12 {
                        continue;
                    }
                    let s = plane / denom;
                    if s <= NEAR || s > far || s >= zbuf[[i, j]] {
                        continue;
                    }
                    let rel = d * s - o;
                    let u = rel.dot(&e1);
                    let v = rel.dot(&e2);
                    if u < 0.0 || u > quad.len1 || v < 0.0 || v > quad.len2 {
                        continue;
                    }
                    zbuf[[i, j]] = s;
                    let col = match obj.kind {
                        ObjectKind::Box | ObjectKind::Billboard => obj.texture.sample(obj.color, u, v),
                    };
                    for c in 0..3 {
                        rgb[[i, j, c]] = col[c] * quad.shade;
                    }
                    semantic[[i, j]] = label;
                }
            }
        }
    }

    for i in 0..height {
        for j in 0..width {
            let z = zbuf[[i, j]];
            if z.is_finite() {
                depth[[i, j]] = z as f32;
            }
        }
    }
    RenderedView { rgb, depth, semantic }
}

/// Render every camera at every timestep.
pub fn render_views(scene: &Scene, rig: &CameraRig, resolution: (usize, usize)) -> Result<MultiViewSequence> {
    let (height, width) = resolution;
    if height == 0 || width == 0 {
        return Err(Error::config("resolution must be positive"));
    }
    if rig.timesteps() != scene.timesteps() {
        return Err(Error::shape("rig timesteps", scene.timesteps(), rig.timesteps()));
    }
    rig.validate()?;
    let k_len = rig.num_cameras();
    let t_len = scene.timesteps();
    let views: Vec<RenderedView> = (0..t_len * k_len)
        .into_par_iter()
        .map(|idx| render_frame(scene, rig, idx % k_len, idx / k_len, height, width))
        .collect();
    let mut frames = Vec::with_capacity(t_len);
    let mut depth = Vec::with_capacity(t_len);
    let mut semantic = Vec::with_capacity(t_len);
    let mut it = views.into_iter();
    for _ in 0..t_len {
        let mut f = Vec::with_capacity(k_len);
        let mut d = Vec::with_capacity(k_len);
        let mut s = Vec::with_capacity(k_len);
        for _ in 0..k_len {
            let v = it.next().expect("frame count");
            f.push(v.rgb);
            d.push(v.depth);
            s.push(v.semantic);
        }
        frames.push(f);
        depth.push(d);
        semantic.push(s);
    }
    Ok(MultiViewSequence {
        height,
        width,
        frames,
        depth,
        semantic,
        rig: rig.clone(),
    })
}
