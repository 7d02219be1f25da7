use ndarray::{Array2, Axis};

use super::Real;
use crate::error::{Error, Result};

/// Row ordering of a [`LatentGrid`]; the channel axis is always last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Rows ordered (b, v, t, n). Viewed as `(B·V, T·N, C)` this is also the
    /// temporal-attention arrangement, so no data moves.
    Canonical,
    /// Rows ordered (b, t, v, n): `(B·T, V·N, C)` for cross-view attention.
    Spatial,
}

/// Token tensor of logical shape `B×V×T×N×C`, stored as a row-major
/// `(B·V·T·N, C)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid<R> {
    pub data: Array2<R>,
    pub batch: usize,
    pub views: usize,
    pub times: usize,
    pub tokens: usize,
    pub layout: Layout,
}

impl<R: Real> LatentGrid<R> {
    pub fn new(data: Array2<R>, dims: [usize; 4]) -> Result<Self> {
        let [batch, views, times, tokens] = dims;
        if dims.contains(&0) || data.ncols() == 0 {
            return Err(Error::shape("latent grid dims", "all > 0", format!("{dims:?}×{}", data.ncols())));
        }
        if data.nrows() != batch * views * times * tokens {
            return Err(Error::shape(
                "latent grid rows",
                (batch * views * times * tokens).to_string(),
                data.nrows().to_string(),
            ));
        }
        Ok(Self {
            data,
            batch,
            views,
            times,
            tokens,
            layout: Layout::Canonical,
        })
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.batch, self.views, self.times, self.tokens, self.channels()]
    }

    /// `(groups, rows per group)` of the current arrangement.
    pub fn groups(&self) -> (usize, usize) {
        match self.layout {
            Layout::Canonical => (self.batch * self.views, self.times * self.tokens),
            Layout::Spatial => (self.batch * self.times, self.views * self.tokens),
        }
    }

    pub fn to_layout(&self, layout: Layout) -> Self {
        if layout == self.layout {
            return self.clone();
        }
        let perm = match layout {
            Layout::Spatial => spatial_perm(self.batch, self.views, self.times, self.tokens),
            Layout::Canonical => canonical_perm(self.batch, self.views, self.times, self.tokens),
        };
        Self {
            data: self.data.select(Axis(0), &perm),
            layout,
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}


/// Source row (canonical order) for every row of the spatial order.
pub(crate) fn spatial_perm(b: usize, v: usize, t: usize, n: usize) -> Vec<usize> {
    let mut perm = Vec::with_capacity(b * v * t * n);
    for bi in 0..b {
        for ti in 0..t {
            for vi in 0..v {
                let base = ((bi * v + vi) * t + ti) * n;
                perm.extend(base..base + n);
            }
        }
    }
    perm
}

/// Source row (spatial order) for every row of the canonical order.
pub(crate) fn canonical_perm(b: usize, v: usize, t: usize, n: usize) -> Vec<usize> {
    let mut perm = Vec::with_capacity(b * v * t * n);
    for bi in 0..b {
        for vi in 0..v {
            for ti in 0..t {
                let base = ((bi * t + ti) * v + vi) * n;
                perm.extend(base..base + n);
            }
        }
    }
    perm
}

/// Apply a row permutation: `out[i] = x[perm[i]]`.
pub(crate) fn gather_rows<R: Real>(x: &Array2<R>, perm: &[usize]) -> Array2<R> {
    x.select(Axis(0), perm)
}
