use ndarray::{ArrayD, IxDyn};

use crate::stdt::nn::{TensorMuts, TensorRefs};
use crate::stdt::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Linear warmup to `peak` over `warmup` steps, constant afterwards.
pub fn lr_schedule(step: u64, peak: f64, warmup: u64) -> f64 {
    if warmup == 0 {
        return peak;
    }
    peak * (step as f64 / warmup as f64).min(1.0)
}

/// Decoupled-weight-decay Adam with 64-bit moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub hp: AdamWParams,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

impl AdamW {
    pub fn new(hp: AdamWParams, shapes: &[Vec<usize>]) -> Self {
        let zeros = |s: &Vec<usize>| ArrayD::zeros(IxDyn(s));
        Self {
            hp,
            t: 0,
            m: shapes.iter().map(zeros).collect(),
            v: shapes.iter().map(zeros).collect(),
        }
    }

    /// One update with learning rate `lr`:
    /// `θ ← θ(1 − lr·λ)`, then `θ ← θ − lr·m̂/(√v̂ + ε)` with bias-corrected
    /// moments.
    pub fn step<R: Real>(&mut self, params: TensorMuts<'_, R>, grads: TensorRefs<'_, R>, lr: f64) {
        self.t += 1;
        let AdamWParams {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hp;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, ((_, mut p), (_, g))) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((pv, gv), mv), vv) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = gv.f64();
                let mut theta = pv.f64();
                theta *= 1.0 - lr * weight_decay;
                *mv = beta1 * *mv + (1.0 - beta1) * g;
                *vv = beta2 * *vv + (1.0 - beta2) * g * g;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                theta -= lr * mhat / (vhat.sqrt() + eps);
                *pv = R::lit(theta);
            }
        }
    }
}
