use ndarray::{concatenate, s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Real;

/// Named, borrowed view of every parameter tensor of a module.
pub type TensorRefs<'a, R> = Vec<(String, ArrayViewD<'a, R>)>;
pub type TensorMuts<'a, R> = Vec<(String, ArrayViewMutD<'a, R>)>;

/// Affine map `y = x·W + b` with `W` stored as `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<R> {
    pub w: Array2<R>,
    pub b: Array1<R>,
}

impl<R: Real> Linear<R> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    /// Gaussian weights with standard deviation `1/sqrt(input)`, zero bias.
    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let std = 1.0 / (input as f64).sqrt();
        let w = Array2::from_shape_simple_fn((input, output), || {
            let z: f64 = StandardNormal.sample(rng);
            R::lit(z * std)
        });
        Self {
            w,
            b: Array1::zeros(output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.w.nrows(), self.w.ncols())
    }

    pub fn forward(&self, x: &Array2<R>) -> Array2<R> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dx`.
    pub fn backward(&self, x: &Array2<R>, dy: &Array2<R>, grad: &mut Self) -> Array2<R> {
        self.accumulate(x, dy, grad);
        dy.dot(&self.w.t())
    }

    /// Parameter gradients only, for layers whose input is not differentiated.
    pub fn accumulate(&self, x: &Array2<R>, dy: &Array2<R>, grad: &mut Self) {
        ndarray::linalg::general_mat_mul(R::one(), &x.t(), dy, R::one(), &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut TensorRefs<'a, R>) {
        out.push((format!("{prefix}.w"), self.w.view().into_dyn()));
        out.push((format!("{prefix}.b"), self.b.view().into_dyn()));
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorMuts<'a, R>) {
        out.push((format!("{prefix}.w"), self.w.view_mut().into_dyn()));
        out.push((format!("{prefix}.b"), self.b.view_mut().into_dyn()));
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row layer normalisation with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<R> {
    pub gamma: Array1<R>,
    pub beta: Array1<R>,
}

#[derive(Debug, Clone)]
pub struct LnCache<R> {
    xhat: Array2<R>,
    rstd: Array1<R>,
}

impl<R> LnCache<R> {
    pub fn xhat(&self) -> &Array2<R> {
        &self.xhat
    }
}

impl<R: Real> LayerNorm<R> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Array1::ones(c),
            beta: Array1::zeros(c),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gamma: Array1::zeros(self.gamma.len()),
            beta: Array1::zeros(self.beta.len()),
        }
    }

    pub fn forward(&self, x: &Array2<R>) -> (Array2<R>, LnCache<R>) {
        let c = R::lit(x.ncols() as f64);
        let eps = R::lit(LN_EPS);
        let mut xhat = x.clone();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / c;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<R>() / c;
            *r = R::one() / (var + eps).sqrt();
            let rs = *r;
            row.mapv_inplace(|v| v * rs);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LnCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LnCache<R>, dy: &Array2<R>, grad: &mut Self) -> Array2<R> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let c = R::lit(dy.ncols() as f64);
        let mut dx = dy * &self.gamma;
        for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.rstd) {
            let m1 = row.sum() / c;
            let m2 = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<R>() / c;
            Zip::from(&mut row).and(&xh).for_each(|d, &h| *d = r * (*d - m1 - h * m2));
        }
        dx
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut TensorRefs<'a, R>) {
        out.push((format!("{prefix}.gamma"), self.gamma.view().into_dyn()));
        out.push((format!("{prefix}.beta"), self.beta.view().into_dyn()));
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorMuts<'a, R>) {
        out.push((format!("{prefix}.gamma"), self.gamma.view_mut().into_dyn()));
        out.push((format!("{prefix}.beta"), self.beta.view_mut().into_dyn()));
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044715;

/// tanh approximation of GELU.
pub fn gelu<R: Real>(x: &Array2<R>) -> Array2<R> {
    let (k, a, half) = (R::lit(GELU_K), R::lit(GELU_A), R::lit(0.5));
    x.mapv(|v| half * v * (R::one() + (k * (v + a * v * v * v)).tanh()))
}

pub fn gelu_backward<R: Real>(x: &Array2<R>, dy: &Array2<R>) -> Array2<R> {
    let (k, a, half, three) = (R::lit(GELU_K), R::lit(GELU_A), R::lit(0.5), R::lit(3.0));
    Zip::from(x).and(dy).map_collect(|&v, &d| {
        let th = (k * (v + a * v * v * v)).tanh();
        let dinner = k * (R::one() + three * a * v * v);
        d * (half * (R::one() + th) + half * v * (R::one() - th * th) * dinner)
    })
}

/// Row-wise softmax in place.
fn softmax_rows<R: Real>(x: &mut Array2<R>) {
    for mut row in x.rows_mut() {
        let m = row.iter().fold(R::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Multi-head attention over independent groups of rows.
///
/// Queries for group `g` are rows `g·nq..(g+1)·nq` of the input. Keys and
/// values are those same rows followed by rows `g·ne..(g+1)·ne` of an
/// optional key/value-only input.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<R> {
    pub heads: usize,
    pub wq: Linear<R>,
    pub wk: Linear<R>,
    pub wv: Linear<R>,
    pub wo: Linear<R>,
}

#[derive(Debug, Clone)]
pub struct AttnCache<R> {
    x: Array2<R>,
    extra: Option<Array2<R>>,
    q: Array2<R>,
    k: Array2<R>,
    v: Array2<R>,
    ke: Option<Array2<R>>,
    ve: Option<Array2<R>>,
    /// Softmax probabilities indexed `[group][head]`.
    probs: Vec<Vec<Array2<R>>>,
    o: Array2<R>,
    groups: usize,
}

/// Gradients returned by [`Attention::backward`].
pub struct AttnGrads<R> {
    pub dx: Array2<R>,
    pub dextra: Option<Array2<R>>,
}

impl<R: Real> Attention<R> {
    /// Random projections with a zero-initialised output projection.
    pub fn new(c: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            heads,
            wq: Linear::random(c, c, rng),
            wk: Linear::random(c, c, rng),
            wv: Linear::random(c, c, rng),
            wo: Linear::zeros(c, c),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            heads: self.heads,
            wq: self.wq.zeros_like(),
            wk: self.wk.zeros_like(),
            wv: self.wv.zeros_like(),
            wo: self.wo.zeros_like(),
        }
    }

    fn group_kv(&self, m: &Array2<R>, e: Option<&Array2<R>>, g: usize, nq: usize, ne: usize) -> Array2<R> {
        let cur = m.slice(s![g * nq..(g + 1) * nq, ..]);
        match e {
            Some(e) if ne > 0 => concatenate(Axis(0), &[cur, e.slice(s![g * ne..(g + 1) * ne, ..])]).expect("same width"),
            _ => cur.to_owned(),
        }
    }

    pub fn forward(&self, x: &Array2<R>, extra: Option<&Array2<R>>, groups: usize) -> (Array2<R>, AttnCache<R>) {
        let c = x.ncols();
        let nq = x.nrows() / groups;
        let extra = extra.filter(|e| e.nrows() > 0);
        let ne = extra.map_or(0, |e| e.nrows() / groups);
        let dh = c / self.heads;
        let scale = R::lit(1.0 / (dh as f64).sqrt());
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let ke = extra.map(|e| self.wk.forward(e));
        let ve = extra.map(|e| self.wv.forward(e));
        let mut o = Array2::zeros((x.nrows(), c));
        let mut probs = Vec::with_capacity(groups);
        for g in 0..groups {
            let kg = self.group_kv(&k, ke.as_ref(), g, nq, ne);
            let vg = self.group_kv(&v, ve.as_ref(), g, nq, ne);
            let mut ph = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qh = q.slice(s![g * nq..(g + 1) * nq, h * dh..(h + 1) * dh]);
                let mut sc = qh.dot(&kg.slice(cols).t());
                sc *= scale;
                softmax_rows(&mut sc);
                let oh = sc.dot(&vg.slice(cols));
                o.slice_mut(s![g * nq..(g + 1) * nq, h * dh..(h + 1) * dh]).assign(&oh);
                ph.push(sc);
            }
            probs.push(ph);
        }
        let out = self.wo.forward(&o);
        let cache = AttnCache {
            x: x.clone(),
            extra: extra.cloned(),
            q,
            k,
            v,
            ke,
            ve,
            probs,
            o,
            groups,
        };
        (out, cache)
    }

    pub fn backward(&self, cache: &AttnCache<R>, dout: &Array2<R>, grad: &mut Self) -> AttnGrads<R> {
        let groups = cache.groups;
        let c = cache.x.ncols();
        let nq = cache.x.nrows() / groups;
        let ne = cache.extra.as_ref().map_or(0, |e| e.nrows() / groups);
        let dh = c / self.heads;
        let scale = R::lit(1.0 / (dh as f64).sqrt());
        let d_o = self.wo.backward(&cache.o, dout, &mut grad.wo);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        let mut dke = cache.ke.as_ref().map(|m| Array2::zeros(m.raw_dim()));
        let mut dve = cache.ve.as_ref().map(|m| Array2::zeros(m.raw_dim()));
        for g in 0..groups {
            let kg = self.group_kv(&cache.k, cache.ke.as_ref(), g, nq, ne);
            let vg = self.group_kv(&cache.v, cache.ve.as_ref(), g, nq, ne);
            for h in 0..self.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let rows_cols = s![g * nq..(g + 1) * nq, h * dh..(h + 1) * dh];
                let p = &cache.probs[g][h];
                let doh = d_o.slice(rows_cols);
                let dvg = p.t().dot(&doh);
                let mut dp = doh.dot(&vg.slice(cols).t());
                for (mut dr, pr) in dp.rows_mut().into_iter().zip(p.rows()) {
                    let dot = dr.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum::<R>();
                    Zip::from(&mut dr).and(&pr).for_each(|d, &pp| *d = pp * (*d - dot) * scale);
                }
                let qh = cache.q.slice(rows_cols);
                dq.slice_mut(rows_cols).assign(&dp.dot(&kg.slice(cols)));
                let dkg = dp.t().dot(&qh);
                let mut dk_cur = dk.slice_mut(rows_cols);
                dk_cur += &dkg.slice(s![..nq, ..]);
                let mut dv_cur = dv.slice_mut(rows_cols);
                dv_cur += &dvg.slice(s![..nq, ..]);
                if ne > 0 {
                    let er = s![g * ne..(g + 1) * ne, h * dh..(h + 1) * dh];
                    let mut a = dke.as_mut().expect("extra keys").slice_mut(er);
                    a += &dkg.slice(s![nq.., ..]);
                    let mut b = dve.as_mut().expect("extra values").slice_mut(er);
                    b += &dvg.slice(s![nq.., ..]);
                }
            }
        }
        let mut dx = self.wq.backward(&cache.x, &dq, &mut grad.wq);
        dx += &self.wk.backward(&cache.x, &dk, &mut grad.wk);
        dx += &self.wv.backward(&cache.x, &dv, &mut grad.wv);
        let dextra = match (&cache.extra, dke, dve) {
            (Some(e), Some(a), Some(b)) => {
                let mut d = self.wk.backward(e, &a, &mut grad.wk);
                d += &self.wv.backward(e, &b, &mut grad.wv);
                Some(d)
            }
            _ => None,
        };
        AttnGrads { dx, dextra }
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut TensorRefs<'a, R>) {
        self.wq.tensors(&format!("{prefix}.q"), out);
        self.wk.tensors(&format!("{prefix}.k"), out);
        self.wv.tensors(&format!("{prefix}.v"), out);
        self.wo.tensors(&format!("{prefix}.o"), out);
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorMuts<'a, R>) {
        self.wq.tensors_mut(&format!("{prefix}.q"), out);
        self.wk.tensors_mut(&format!("{prefix}.k"), out);
        self.wv.tensors_mut(&format!("{prefix}.v"), out);
        self.wo.tensors_mut(&format!("{prefix}.o"), out);
    }
}
