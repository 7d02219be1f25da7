use nalgebra::Vector3;
use ndarray::{Array2, Array3};

use crate::synthworld::{MultiViewSequence, Scene, SEM_GROUND, SEM_OBJECT_BASE, SEM_SKY};

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Relative depth tolerance for visibility checks.
const DEPTH_TOL: f64 = 0.03;

pub fn mse(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "image shapes differ");
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP`].
pub fn psnr(a: &Array3<f32>, b: &Array3<f32>, max_val: f64) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (max_val * max_val / m).log10()).min(PSNR_CAP)
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering of one channel.
fn filter(img: &Array2<f64>, w: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, wd) = img.dim();
    let (oh, ow) = (h + 1 - SSIM_WINDOW, wd + 1 - SSIM_WINDOW);
    let rows = Array2::from_shape_fn((h, ow), |(i, j)| (0..SSIM_WINDOW).map(|k| w[k] * img[[i, j + k]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..SSIM_WINDOW).map(|k| w[k] * rows[[i + k, j]]).sum::<f64>())
}

/// Mean structural similarity over channels with an 11×11 Gaussian window
/// (σ = 1.5), valid positions only, dynamic range 1. Images smaller than
/// the window are compared with one global window.
pub fn ssim(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "image shapes differ");
    let (h, w, ch) = a.dim();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let win = gaussian_window();
    let mut total = 0.0;
    for c in 0..ch {
        let x = Array2::from_shape_fn((h, w), |(i, j)| a[[i, j, c]] as f64);
        let y = Array2::from_shape_fn((h, w), |(i, j)| b[[i, j, c]] as f64);
        let stats = if h >= SSIM_WINDOW && w >= SSIM_WINDOW {
            let f = |m: &Array2<f64>| filter(m, &win);
            (f(&x), f(&y), f(&(&x * &x)), f(&(&y * &y)), f(&(&x * &y)))
        } else {
            let g = |m: &Array2<f64>| Array2::from_elem((1, 1), m.mean().unwrap_or(0.0));
            (g(&x), g(&y), g(&(&x * &x)), g(&(&y * &y)), g(&(&x * &y)))
        };
        let (mx, my, xx, yy, xy) = stats;
        let mut sum = 0.0;
        for idx in 0..mx.len() {
            let (i, j) = (idx / mx.ncols(), idx % mx.ncols());
            let (ux, uy) = (mx[[i, j]], my[[i, j]]);
            let vx = xx[[i, j]] - ux * ux;
            let vy = yy[[i, j]] - uy * uy;
            let cxy = xy[[i, j]] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    total / ch as f64
}

/// Bilinear colour at continuous pixel `(u, v)` (column, row). Coordinates
/// within 1e-6 of an integer snap to it.
fn bilinear(img: &Array3<f32>, u: f64, v: f64) -> [f64; 3] {
    let snap = |x: f64| if (x - x.round()).abs() < 1e-6 { x.round() } else { x };
    let (u, v) = (snap(u), snap(v));
    let (h, w, _) = img.dim();
    let (j0, i0) = (u.floor() as usize, v.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(w - 1), (i0 + 1).min(h - 1));
    let (fu, fv) = (u - j0 as f64, v - i0 as f64);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |i: usize, j: usize| img[[i, j, c]] as f64;
        *o = (1.0 - fv) * ((1.0 - fu) * p(i0, j0) + fu * p(i0, j1)) + fv * ((1.0 - fu) * p(i1, j0) + fu * p(i1, j1));
    }
    out
}

/// Whether a point with camera depth `z` and semantic label `label`
/// projecting to `(u, v)` is visible in a view with the given ground-truth
/// depth and semantics: every bilinear neighbour carries the same label and
/// the nearest depth agrees within tolerance.
fn visible(depth: &Array2<f32>, sem: &Array2<u8>, u: f64, v: f64, z: f64, label: u8) -> bool {
    let (h, w) = depth.dim();
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return false;
    }
    let (j0, i0) = (u.floor() as usize, v.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(w - 1), (i0 + 1).min(h - 1));
    if [(i0, j0), (i0, j1), (i1, j0), (i1, j1)].iter().any(|&(i, j)| sem[[i, j]] != label) {
        return false;
    }
    let d = depth[[v.round() as usize, u.round() as usize]] as f64;
    d.is_finite() && ((d - z).abs() / z) < DEPTH_TOL
}

fn abs_diff(a: &Array3<f32>, i: usize, j: usize, b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[[i, j, c]] as f64 - b[c]).abs()).sum::<f64>() / 3.0
}

/// Pixels of camera `i` at time `t` that are visible in some other camera.
pub fn overlap_mask(gt: &MultiViewSequence, t: usize, i: usize) -> Array2<bool> {
    let (h, w) = (gt.height, gt.width);
    let rig = &gt.rig;
    Array2::from_shape_fn((h, w), |(r, c)| {
        let z = gt.depth[t][i][[r, c]] as f64;
        let label = gt.semantic[t][i][[r, c]];
        if !z.is_finite() || label == SEM_SKY {
            return false;
        }
        let pw = rig.cam_to_world(i, t, &rig.cameras[i].intrinsics.unproject(c as f64, r as f64, z));
        (0..gt.num_views()).filter(|&j| j != i).any(|j| {
            let q = rig.world_to_cam(j, t, &pw);
            rig.cameras[j]
                .intrinsics
                .project(&q)
                .is_some_and(|(u, v)| visible(&gt.depth[t][j], &gt.semantic[t][j], u, v, q.z, label))
        })
    })
}

/// Mean absolute colour difference between cameras over surface points
/// seen by two cameras at the same time, using ground-truth geometry for
/// correspondence and occlusion. `None` when no point is shared.
pub fn cross_view_consistency(seq: &MultiViewSequence, gt: &MultiViewSequence) -> Option<f64> {
    let rig = &gt.rig;
    let (mut sum, mut count) = (0.0, 0usize);
    for t in 0..gt.timesteps() {
        for i in 0..gt.num_views() {
            for j in 0..gt.num_views() {
                if i == j {
                    continue;
                }
                for r in 0..gt.height {
                    for c in 0..gt.width {
                        let z = gt.depth[t][i][[r, c]] as f64;
                        let label = gt.semantic[t][i][[r, c]];
                        if !z.is_finite() || label == SEM_SKY {
                            continue;
                        }
                        let pw = rig.cam_to_world(i, t, &rig.cameras[i].intrinsics.unproject(c as f64, r as f64, z));
                        let q = rig.world_to_cam(j, t, &pw);
                        let Some((u, v)) = rig.cameras[j].intrinsics.project(&q) else {
                            continue;
                        };
                        if visible(&gt.depth[t][j], &gt.semantic[t][j], u, v, q.z, label) {
                            sum += abs_diff(&seq.frames[t][i], r, c, bilinear(&seq.frames[t][j], u, v));
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// World position at time `to` of the surface point `p` seen at time
/// `from` with semantic `label`.
fn move_point(scene: &Scene, p: &Vector3<f64>, label: u8, from: usize, to: usize) -> Vector3<f64> {
    if label == SEM_GROUND || label < SEM_OBJECT_BASE {
        return *p;
    }
    let obj = &scene.objects[(label - SEM_OBJECT_BASE) as usize];
    let (a, b) = (obj.trajectory[from], obj.trajectory[to]);
    let (ca, sa) = (a.yaw.cos(), a.yaw.sin());
    let (dx, dy) = (p.x - a.x, p.y - a.y);
    let local = (ca * dx + sa * dy, -sa * dx + ca * dy);
    let (cb, sb) = (b.yaw.cos(), b.yaw.sin());
    Vector3::new(b.x + cb * local.0 - sb * local.1, b.y + sb * local.0 + cb * local.1, p.z)
}

/// Mean absolute difference between each frame and its predecessor warped
/// by the ground-truth scene and ego motion. Pixels without a visible
/// counterpart in the previous frame (disocclusions, sky, out of view) are
/// excluded. `None` for single-frame sequences or when nothing is visible.
pub fn temporal_flicker(seq: &MultiViewSequence, gt: &MultiViewSequence, scene: &Scene) -> Option<f64> {
    let (sum, count) = flicker_sums(seq, gt, scene)
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + a, n + b));
    (count > 0).then(|| sum / count as f64)
}

/// Flicker of each transition `t−1 → t` (index `t − 1`), `None` where no
/// pixel is visible in both frames.
pub fn temporal_flicker_per_step(seq: &MultiViewSequence, gt: &MultiViewSequence, scene: &Scene) -> Vec<Option<f64>> {
    flicker_sums(seq, gt, scene)
        .into_iter()
        .map(|(s, n)| (n > 0).then(|| s / n as f64))
        .collect()
}

fn flicker_sums(seq: &MultiViewSequence, gt: &MultiViewSequence, scene: &Scene) -> Vec<(f64, usize)> {
    let rig = &gt.rig;
    let mut out = Vec::new();
    for t in 1..gt.timesteps() {
        let (mut sum, mut count) = (0.0, 0usize);
        for k in 0..gt.num_views() {
            let intr = &rig.cameras[k].intrinsics;
            for r in 0..gt.height {
                for c in 0..gt.width {
                    let z = gt.depth[t][k][[r, c]] as f64;
                    let label = gt.semantic[t][k][[r, c]];
                    if !z.is_finite() || label == SEM_SKY {
                        continue;
                    }
                    let pw = rig.cam_to_world(k, t, &intr.unproject(c as f64, r as f64, z));
                    let prev = move_point(scene, &pw, label, t, t - 1);
                    let q = rig.world_to_cam(k, t - 1, &prev);
                    let Some((u, v)) = intr.project(&q) else {
                        continue;
                    };
                    if visible(&gt.depth[t - 1][k], &gt.semantic[t - 1][k], u, v, q.z, label) {
                        sum += abs_diff(&seq.frames[t][k], r, c, bilinear(&seq.frames[t - 1][k], u, v));
                        count += 1;
                    }
                }
            }
        }
        out.push((sum, count));
    }
    out
}
