//! Fixed separable Gaussian applied to the predicted residual.
//!
//! Each pass is a 1-D convolution renormalised by the kernel mass inside the
//! image, so a constant residual passes through unchanged. The transpose is
//! used by the backward pass.

use ndarray::{Array6, ArrayViewMut1, Axis};

use super::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSmoother {
    kernel: Vec<f64>,
}

impl GaussianSmoother {
    /// `None` for `sigma <= 0`.
    pub fn new(sigma: f64) -> Option<Self> {
        if sigma <= 0.0 {
            return None;
        }
        let r = (3.0 * sigma).ceil() as i64;
        let kernel = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
        Some(Self { kernel })
    }

    fn radius(&self) -> i64 {
        (self.kernel.len() / 2) as i64
    }

    /// Kernel mass inside `0..len` around each position.
    fn mass(&self, len: usize) -> Vec<f64> {
        let r = self.radius();
        (0..len as i64)
            .map(|i| {
                (-r..=r)
                    .filter(|d| (0..len as i64).contains(&(i + d)))
                    .map(|d| self.kernel[(d + r) as usize])
                    .sum()
            })
            .collect()
    }

    fn conv<R: Real>(&self, mut lane: ArrayViewMut1<R>, scale_in: Option<&[f64]>, scale_out: Option<&[f64]>) {
        let n = lane.len();
        let r = self.radius();
        let src: Vec<f64> = lane
            .iter()
            .enumerate()
            .map(|(i, v)| v.f64() / scale_in.map_or(1.0, |s| s[i]))
            .collect();
        for i in 0..n {
            let mut acc = 0.0;
            for d in -r..=r {
                let j = i as i64 + d;
                if (0..n as i64).contains(&j) {
                    acc += self.kernel[(d + r) as usize] * src[j as usize];
                }
            }
            lane[i] = R::lit(acc / scale_out.map_or(1.0, |s| s[i]));
        }
    }

    /// Smooth the `H` and `W` axes of a `[B,V,T,H,W,C]` tensor.
    pub fn apply<R: Real>(&self, x: &mut Array6<R>) {
        for axis in [3, 4] {
            let m = self.mass(x.len_of(Axis(axis)));
            for lane in x.lanes_mut(Axis(axis)) {
                self.conv(lane, None, Some(&m));
            }
        }
    }

    /// Transpose of [`GaussianSmoother::apply`].
    pub fn apply_transpose<R: Real>(&self, g: &mut Array6<R>) {
        for axis in [4, 3] {
            let m = self.mass(g.len_of(Axis(axis)));
            for lane in g.lanes_mut(Axis(axis)) {
                self.conv(lane, Some(&m), None);
            }
        }
    }
}
