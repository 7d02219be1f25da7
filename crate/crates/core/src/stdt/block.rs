use ndarray::Array2;
use rand::Rng;

use super::grid::{canonical_perm, gather_rows, spatial_perm, Layout, LatentGrid};
use super::nn::{gelu, gelu_backward, AttnCache, Attention, LayerNorm, Linear, LnCache, TensorMuts, TensorRefs};
use super::Real;

/// One interleaved block: history-conditioned temporal attention, then
/// cross-view spatial attention, then a point-wise MLP, each wrapped as
/// `x + f(LayerNorm(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedBlock<R> {
    pub ln1: LayerNorm<R>,
    pub temporal: Attention<R>,
    pub ln2: LayerNorm<R>,
    pub spatial: Attention<R>,
    pub ln3: LayerNorm<R>,
    pub fc1: Linear<R>,
    pub fc2: Linear<R>,
}

/// Which attention sub-layers are active; a disabled sub-layer is skipped
/// and its residual branch contributes nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSwitches {
    pub temporal: bool,
    pub spatial: bool,
}

impl Default for BlockSwitches {
    fn default() -> Self {
        Self {
            temporal: true,
            spatial: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TemporalCache<R> {
    ln_x: LnCache<R>,
    ln_h: Option<LnCache<R>>,
    attn: AttnCache<R>,
}

#[derive(Debug, Clone)]
pub struct SpatialCache<R> {
    ln: LnCache<R>,
    attn: AttnCache<R>,
    dims: [usize; 4],
}

#[derive(Debug, Clone)]
pub struct MlpCache<R> {
    ln: LnCache<R>,
    hidden: Array2<R>,
    act: Array2<R>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<R> {
    temporal: Option<TemporalCache<R>>,
    spatial: Option<SpatialCache<R>>,
    mlp: MlpCache<R>,
}

/// Residual stream right after the temporal and spatial sub-layers.
#[derive(Debug, Clone)]
pub struct BlockTaps<R> {
    pub after_temporal: Array2<R>,
    pub after_spatial: Array2<R>,
}

impl<R: Real> InterleavedBlock<R> {
    pub fn new(c: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            ln1: LayerNorm::new(c),
            temporal: Attention::new(c, heads, rng),
            ln2: LayerNorm::new(c),
            spatial: Attention::new(c, heads, rng),
            ln3: LayerNorm::new(c),
            fc1: Linear::random(c, 4 * c, rng),
            fc2: Linear::zeros(4 * c, c),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            ln1: self.ln1.zeros_like(),
            temporal: self.temporal.zeros_like(),
            ln2: self.ln2.zeros_like(),
            spatial: self.spatial.zeros_like(),
            ln3: self.ln3.zeros_like(),
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    /// Temporal step. Queries are the current tokens of each (batch, view)
    /// over all T·N positions; keys and values additionally include that
    /// view's history tokens, which are read but never written.
    pub fn temporal_step(&self, x: &LatentGrid<R>, history: Option<&Array2<R>>) -> (LatentGrid<R>, TemporalCache<R>) {
        debug_assert_eq!(x.layout, Layout::Canonical);
        let (nx, ln_x) = self.ln1.forward(&x.data);
        let (nh, ln_h) = match history {
            Some(h) if h.nrows() > 0 => {
                let (n, c) = self.ln1.forward(h);
                (Some(n), Some(c))
            }
            _ => (None, None),
        };
        let (groups, _) = x.groups();
        let (a, attn) = self.temporal.forward(&nx, nh.as_ref(), groups);
        let out = LatentGrid {
            data: &x.data + &a,
            ..x.clone()
        };
        (out, TemporalCache { ln_x, ln_h, attn })
    }

    /// Returns the gradient for the block input and, if history was used,
    /// for the history tokens.
    pub fn temporal_backward(
        &self,
        cache: &TemporalCache<R>,
        dout: &Array2<R>,
        grad: &mut Self,
    ) -> (Array2<R>, Option<Array2<R>>) {
        let g = self.temporal.backward(&cache.attn, dout, &mut grad.temporal);
        let dx = dout + &self.ln1.backward(&cache.ln_x, &g.dx, &mut grad.ln1);
        let dh = match (&cache.ln_h, g.dextra) {
            (Some(c), Some(d)) => Some(self.ln1.backward(c, &d, &mut grad.ln1)),
            _ => None,
        };
        (dx, dh)
    }

    /// Spatial step: full attention across all views' tokens at each
    /// (batch, timestep).
    pub fn spatial_step(&self, x: &LatentGrid<R>) -> (LatentGrid<R>, SpatialCache<R>) {
        let dims = [x.batch, x.views, x.times, x.tokens];
        let xs = x.to_layout(Layout::Spatial);
        let (groups, _) = xs.groups();
        let (n, ln) = self.ln2.forward(&xs.data);
        let (a, attn) = self.spatial.forward(&n, None, groups);
        let a = gather_rows(&a, &canonical_perm(dims[0], dims[1], dims[2], dims[3]));
        let out = LatentGrid {
            data: &x.data + &a,
            ..x.clone()
        };
        (out, SpatialCache { ln, attn, dims })
    }

    pub fn spatial_backward(&self, cache: &SpatialCache<R>, dout: &Array2<R>, grad: &mut Self) -> Array2<R> {
        let [b, v, t, n] = cache.dims;
        let ds = gather_rows(dout, &spatial_perm(b, v, t, n));
        let g = self.spatial.backward(&cache.attn, &ds, &mut grad.spatial);
        let dn = self.ln2.backward(&cache.ln, &g.dx, &mut grad.ln2);
        dout + &gather_rows(&dn, &canonical_perm(b, v, t, n))
    }

    pub fn mlp_step(&self, x: &LatentGrid<R>) -> (LatentGrid<R>, MlpCache<R>) {
        let (n, ln) = self.ln3.forward(&x.data);
        let hidden = self.fc1.forward(&n);
        let act = gelu(&hidden);
        let y = self.fc2.forward(&act);
        let out = LatentGrid {
            data: &x.data + &y,
            ..x.clone()
        };
        (out, MlpCache { ln, hidden, act })
    }

    pub fn mlp_backward(&self, cache: &MlpCache<R>, dout: &Array2<R>, grad: &mut Self) -> Array2<R> {
        let dact = self.fc2.backward(&cache.act, dout, &mut grad.fc2);
        let dh = gelu_backward(&cache.hidden, &dact);
        // The normalised input is recomputable from the LayerNorm cache.
        let n = self.ln3_output(&cache.ln);
        let dn = self.fc1.backward(&n, &dh, &mut grad.fc1);
        dout + &self.ln3.backward(&cache.ln, &dn, &mut grad.ln3)
    }

    fn ln3_output(&self, cache: &LnCache<R>) -> Array2<R> {
        cache.xhat() * &self.ln3.gamma + &self.ln3.beta
    }

    /// Temporal, then spatial, then MLP. Returns the output in the input
    /// layout together with the intermediate taps.
    pub fn forward(
        &self,
        x: &LatentGrid<R>,
        history: Option<&Array2<R>>,
        switches: BlockSwitches,
    ) -> (LatentGrid<R>, BlockCache<R>, BlockTaps<R>) {
        let (x1, tc) = if switches.temporal {
            let (y, c) = self.temporal_step(x, history);
            (y, Some(c))
        } else {
            (x.clone(), None)
        };
        let (x2, sc) = if switches.spatial {
            let (y, c) = self.spatial_step(&x1);
            (y, Some(c))
        } else {
            (x1.clone(), None)
        };
        let (x3, mc) = self.mlp_step(&x2);
        let taps = BlockTaps {
            after_temporal: x1.data,
            after_spatial: x2.data.clone(),
        };
        let cache = BlockCache {
            temporal: tc,
            spatial: sc,
            mlp: mc,
        };
        (x3, cache, taps)
    }

    /// Backward through the block; `dtaps` are extra gradients arriving at
    /// the two tap points.
    pub fn backward(
        &self,
        cache: &BlockCache<R>,
        dout: &Array2<R>,
        dtaps: Option<(&Array2<R>, &Array2<R>)>,
        grad: &mut Self,
    ) -> (Array2<R>, Option<Array2<R>>) {
        let mut d = self.mlp_backward(&cache.mlp, dout, grad);
        if let Some((_, ds)) = dtaps {
            d += ds;
        }
        if let Some(sc) = &cache.spatial {
            d = self.spatial_backward(sc, &d, grad);
        }
        if let Some((dt, _)) = dtaps {
            d += dt;
        }
        match &cache.temporal {
            Some(tc) => self.temporal_backward(tc, &d, grad),
            None => (d, None),
        }
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut TensorRefs<'a, R>) {
        self.ln1.tensors(&format!("{prefix}.ln1"), out);
        self.temporal.tensors(&format!("{prefix}.temporal"), out);
        self.ln2.tensors(&format!("{prefix}.ln2"), out);
        self.spatial.tensors(&format!("{prefix}.spatial"), out);
        self.ln3.tensors(&format!("{prefix}.ln3"), out);
        self.fc1.tensors(&format!("{prefix}.fc1"), out);
        self.fc2.tensors(&format!("{prefix}.fc2"), out);
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorMuts<'a, R>) {
        self.ln1.tensors_mut(&format!("{prefix}.ln1"), out);
        self.temporal.tensors_mut(&format!("{prefix}.temporal"), out);
        self.ln2.tensors_mut(&format!("{prefix}.ln2"), out);
        self.spatial.tensors_mut(&format!("{prefix}.spatial"), out);
        self.ln3.tensors_mut(&format!("{prefix}.ln3"), out);
        self.fc1.tensors_mut(&format!("{prefix}.fc1"), out);
        self.fc2.tensors_mut(&format!("{prefix}.fc2"), out);
    }
}
