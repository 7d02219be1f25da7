//! Training objectives: the rectified-flow diffusion loss, the angular and
//! scale alignment losses, and the geometry teacher they align to.

mod teacher;

pub use teacher::{geometry_teacher, patch_geometry, teacher_projection, TeacherFeatures, TEACHER_RAW};

use ndarray::{Array2, Array3, Array6, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stdt::{Denoiser, DenoiserInput, HistoryInput, Real};

/// Stabiliser for norms in the alignment losses.
pub const ALIGN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AlignmentWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.05 }
    }
}

impl AlignmentWeights {
    pub const OFF: Self = Self { alpha: 0.0, beta: 0.0 };

    pub fn is_off(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite() {
            Ok(())
        } else {
            Err(Error::config("alignment weights must be finite and non-negative"))
        }
    }
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l_diff: f64,
    pub l_angular: f64,
    pub l_scale: f64,
    pub total: f64,
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse<R: Real>(pred: &Array6<R>, target: &Array6<R>) -> (f64, Array6<R>) {
    let n = pred.len() as f64;
    let mut acc = 0.0f64;
    let scale = R::lit(2.0 / n);
    let grad = Zip::from(pred).and(target).map_collect(|&p, &t| {
        let d = p - t;
        acc += (d * d).f64();
        d * scale
    });
    (acc / n, grad)
}

/// `x_τ = (1−τ)·x₀ + τ·ε`, per sample τ.
pub fn interpolate<R: Real>(x0: &Array6<R>, eps: &Array6<R>, tau: &[f64]) -> Array6<R> {
    let mut out = x0.clone();
    for (b, mut s) in out.outer_iter_mut().enumerate() {
        let t = R::lit(tau[b]);
        let e = eps.index_axis(ndarray::Axis(0), b);
        Zip::from(&mut s).and(&e).for_each(|x, &n| *x = (R::one() - t) * *x + t * n);
    }
    out
}

/// Velocity target `ε − x₀`.
pub fn velocity<R: Real>(x0: &Array6<R>, eps: &Array6<R>) -> Array6<R> {
    eps - x0
}

/// Diffusion loss between a velocity prediction and `ε − x₀`.
pub fn diffusion_loss<R: Real>(pred: &Array6<R>, x0: &Array6<R>, eps: &Array6<R>) -> (f64, Array6<R>) {
    mse(pred, &velocity(x0, eps))
}

fn norm(row: ndarray::ArrayView1<f64>) -> f64 {
    row.dot(&row).sqrt()
}

/// Mean over masked tokens of `1 − cos(f, g)`; returns the loss and `dL/df`.
pub fn angular_alignment_loss(f: &Array2<f64>, g: &Array2<f64>, mask: &[bool]) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(f.raw_dim());
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let (fr, gr) = (f.row(i), g.row(i));
        let (nf, ng) = (norm(fr), norm(gr));
        let denom = (nf * ng).max(ALIGN_EPS);
        let cos = fr.dot(&gr) / denom;
        loss += 1.0 - cos;
        if nf * ng > ALIGN_EPS {
            let mut d = grad.row_mut(i);
            Zip::from(&mut d).and(&fr).and(&gr).for_each(|d, &a, &b| {
                *d = -(b / denom - cos * a / (nf * nf)) / count as f64;
            });
        } else {
            let mut d = grad.row_mut(i);
            Zip::from(&mut d).and(&gr).for_each(|d, &b| *d = -(b / denom) / count as f64);
        }
    }
    (loss / count as f64, grad)
}

/// Mean over masked tokens of `(log(‖f‖+ε) − log(‖g‖+ε))²`; returns the
/// loss and `dL/df`.
pub fn scale_alignment_loss(f: &Array2<f64>, g: &Array2<f64>, mask: &[bool]) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(f.raw_dim());
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let (nf, ng) = (norm(f.row(i)), norm(g.row(i)));
        let r = (nf + ALIGN_EPS).ln() - (ng + ALIGN_EPS).ln();
        loss += r * r;
        if nf > 0.0 {
            let k = 2.0 * r / ((nf + ALIGN_EPS) * nf) / count as f64;
            let mut d = grad.row_mut(i);
            Zip::from(&mut d).and(&f.row(i)).for_each(|d, &a| *d = k * a);
        }
    }
    (loss / count as f64, grad)
}

/// A fully assembled training batch. Images are in [−1, 1].
#[derive(Debug, Clone)]
pub struct TrainBatch<R> {
    /// Ground-truth current frames, `[B,V,T,H,W,3]`.
    pub x0: Array6<R>,
    pub corrupted: Array6<R>,
    pub guidance: Array6<R>,
    pub history: Option<HistoryInput<R>>,
    pub geometry: Array3<R>,
    /// Teacher features for every current token (canonical order).
    pub teacher: Array2<f64>,
    pub teacher_mask: Vec<bool>,
}

/// Noise level and noise sample for one batch.
#[derive(Debug, Clone)]
pub struct NoiseDraw<R> {
    pub tau: Vec<f64>,
    pub eps: Array6<R>,
}

impl<R: Real> NoiseDraw<R> {
    pub fn sample(rng: &mut impl Rng, shape: (usize, usize, usize, usize, usize, usize)) -> Self {
        let tau = (0..shape.0).map(|_| rng.random::<f64>()).collect();
        let eps = Array6::from_shape_simple_fn(shape, || {
            let z: f64 = StandardNormal.sample(rng);
            R::lit(z)
        });
        Self { tau, eps }
    }
}

impl<R: Real> TrainBatch<R> {
    pub fn model_input(&self, noise: &NoiseDraw<R>) -> DenoiserInput<R> {
        let t = self.x0.dim().2;
        DenoiserInput {
            noisy: interpolate(&self.x0, &noise.eps, &noise.tau),
            corrupted: self.corrupted.clone(),
            guidance: self.guidance.clone(),
            history: self.history.clone(),
            geometry: self.geometry.clone(),
            tau: noise.tau.clone(),
            time_index: (0..t).map(|i| i as f64).collect(),
        }
    }
}

/// Total fine-tuning loss `L_diff + α·L_angular + β·L_scale` and the
/// parameter gradients. The alignment terms average over the two taps.
/// With both weights zero the alignment branch is skipped entirely, so the
/// result equals the plain diffusion objective.
pub fn loss_and_grad<R: Real>(
    model: &Denoiser<R>,
    batch: &TrainBatch<R>,
    noise: &NoiseDraw<R>,
    weights: AlignmentWeights,
) -> Result<(LossParts, Denoiser<R>)> {
    let input = batch.model_input(noise);
    let (out, cache) = model.forward_train(&input)?;
    let (l_diff, dpred) = diffusion_loss(&out.prediction, &batch.x0, &noise.eps);
    let (mut l_angular, mut l_scale) = (0.0, 0.0);
    let mut dalign = None;
    let (fa, fb) = out.align.as_ref().expect("forward_train returns alignment features");
    let fa64 = fa.mapv(|v| v.f64());
    let fb64 = fb.mapv(|v| v.f64());
    if batch.teacher.dim() != fa64.dim() {
        return Err(Error::shape(
            "teacher features",
            format!("{:?}", fa64.dim()),
            format!("{:?}", batch.teacher.dim()),
        ));
    }
    let (la, ga) = angular_alignment_loss(&fa64, &batch.teacher, &batch.teacher_mask);
    let (lb, gb) = angular_alignment_loss(&fb64, &batch.teacher, &batch.teacher_mask);
    let (sa, hsa) = scale_alignment_loss(&fa64, &batch.teacher, &batch.teacher_mask);
    let (sb, hsb) = scale_alignment_loss(&fb64, &batch.teacher, &batch.teacher_mask);
    l_angular += 0.5 * (la + lb);
    l_scale += 0.5 * (sa + sb);
    if !weights.is_off() {
        let (a, b) = (0.5 * weights.alpha, 0.5 * weights.beta);
        let da = (ga * a + hsa * b).mapv(R::lit);
        let db = (gb * a + hsb * b).mapv(R::lit);
        dalign = Some((da, db));
    }
    let total = if weights.is_off() {
        l_diff
    } else {
        l_diff + weights.alpha * l_angular + weights.beta * l_scale
    };
    let parts = LossParts {
        l_diff,
        l_angular,
        l_scale,
        total,
    };
    if !total.is_finite() || !l_angular.is_finite() || !l_scale.is_finite() {
        return Err(Error::NonFinite {
            stage: format!("loss {parts:?}"),
        });
    }
    let grads = model.backward(&cache, &dpred, dalign.as_ref().map(|(a, b)| (a, b)));
    Ok((parts, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn rand_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, "obj");
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut r))
    }

    #[test]
    fn angular_extremes() {
        let g = rand_rows(5, 8, 1);
        let mask = vec![true; 5];
        let scaled = &g * 3.5;
        assert!(angular_alignment_loss(&scaled, &g, &mask).0.abs() < 1e-12);
        assert!((angular_alignment_loss(&(-&g), &g, &mask).0 - 2.0).abs() < 1e-12);
        let zeros = Array2::zeros((5, 8));
        let (l, d) = angular_alignment_loss(&zeros, &g, &mask);
        assert_eq!(l, 1.0);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn scale_log_ratio() {
        let g = rand_rows(4, 6, 2);
        let mask = vec![true; 4];
        assert!(scale_alignment_loss(&g, &g, &mask).0 < 1e-20);
        let e = &g * std::f64::consts::E;
        assert!((scale_alignment_loss(&e, &g, &mask).0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn alignment_gradients_match_finite_differences() {
        let f = rand_rows(3, 5, 3);
        let g = rand_rows(3, 5, 4);
        let mask = vec![true, false, true];
        let (_, da) = angular_alignment_loss(&f, &g, &mask);
        let (_, ds) = scale_alignment_loss(&f, &g, &mask);
        for idx in [(0, 0), (0, 4), (2, 2), (1, 1)] {
            let h = 1e-6;
            let mut fp = f.clone();
            fp[idx] += h;
            let mut fm = f.clone();
            fm[idx] -= h;
            let na = (angular_alignment_loss(&fp, &g, &mask).0 - angular_alignment_loss(&fm, &g, &mask).0) / (2.0 * h);
            let ns = (scale_alignment_loss(&fp, &g, &mask).0 - scale_alignment_loss(&fm, &g, &mask).0) / (2.0 * h);
            assert!((na - da[idx]).abs() < 1e-8);
            assert!((ns - ds[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn exact_velocity_gives_zero_loss() {
        let mut r = rng::stream(1, "v");
        let noise = NoiseDraw::<f64>::sample(&mut r, (2, 1, 1, 4, 4, 3));
        let x0 = Array6::from_elem((2, 1, 1, 4, 4, 3), 0.3);
        let v = velocity(&x0, &noise.eps);
        assert_eq!(diffusion_loss(&v, &x0, &noise.eps).0, 0.0);
    }
}
