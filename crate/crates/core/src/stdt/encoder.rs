use ndarray::{s, Array1, Array2, Array3, Array6, ArrayView6, Axis};
use rand::Rng;

use super::nn::{Linear, TensorMuts, TensorRefs};
use super::Real;

/// Per-pixel input channels: x slot (3), corrupted frame (3), normalised
/// depth (1), semantic one-hot for sky/ground/object (3).
pub const PIXEL_CHANNELS: usize = 10;
pub const GUIDANCE_CHANNELS: usize = 4;
pub const GEOMETRY_DIM: usize = 16;

/// Split `[B,V,T,H,W,c]` pixels into `(B·V·T·N, p·p·c)` patch rows; token
/// index `n = row·(W/p) + col`, features ordered (dy, dx, channel).
pub fn patchify<R: Real>(pix: &ArrayView6<R>, p: usize) -> Array2<R> {
    let (b, v, t, h, w, c) = pix.dim();
    let (hp, wp) = (h / p, w / p);
    let mut out = Array2::zeros((b * v * t * hp * wp, p * p * c));
    let mut row = 0;
    for bi in 0..b {
        for vi in 0..v {
            for ti in 0..t {
                let img = pix.slice(s![bi, vi, ti, .., .., ..]);
                for pr in 0..hp {
                    for pc in 0..wp {
                        let mut dst = out.row_mut(row);
                        let mut f = 0;
                        for dy in 0..p {
                            for dx in 0..p {
                                for ch in 0..c {
                                    dst[f] = img[[pr * p + dy, pc * p + dx, ch]];
                                    f += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`].
pub fn unpatchify<R: Real>(rows: &Array2<R>, dims: [usize; 5], p: usize, c: usize) -> Array6<R> {
    let [b, v, t, h, w] = dims;
    let (hp, wp) = (h / p, w / p);
    let mut out = Array6::zeros((b, v, t, h, w, c));
    let mut row = 0;
    for bi in 0..b {
        for vi in 0..v {
            for ti in 0..t {
                for pr in 0..hp {
                    for pc in 0..wp {
                        let src = rows.row(row);
                        let mut f = 0;
                        for dy in 0..p {
                            for dx in 0..p {
                                for ch in 0..c {
                                    out[[bi, vi, ti, pr * p + dy, pc * p + dx, ch]] = src[f];
                                    f += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
    out
}

/// Sinusoidal features of a scalar position: `[sin(pos·ω_i), cos(pos·ω_i)]`
/// for `ω_i = 10000^(−2i/dim)`.
pub fn sinusoid<R: Real>(pos: f64, dim: usize) -> Array1<R> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let omega = 10000f64.powf(-(2.0 * i as f64) / dim as f64);
        out[2 * i] = R::lit((pos * omega).sin());
        out[2 * i + 1] = R::lit((pos * omega).cos());
    }
    out
}

/// Fixed 2D encoding of the patch grid: row position in the first half of
/// the channels, column position in the second half.
pub fn spatial_encoding<R: Real>(hp: usize, wp: usize, c: usize) -> Array2<R> {
    let mut out = Array2::zeros((hp * wp, c));
    for r in 0..hp {
        for col in 0..wp {
            let mut row = out.row_mut(r * wp + col);
            row.slice_mut(s![..c / 2]).assign(&sinusoid::<R>(r as f64, c / 2));
            row.slice_mut(s![c / 2..]).assign(&sinusoid::<R>(col as f64, c / 2));
        }
    }
    out
}

/// Features of the diffusion time; τ is scaled to [0, 1000].
pub fn tau_features<R: Real>(tau: f64, c: usize) -> Array1<R> {
    sinusoid(1000.0 * tau, c)
}

/// Patch projection plus additive embeddings: fixed spatial and time-index
/// encodings, a learned camera-geometry embedding per view and a learned
/// diffusion-time embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEncoder<R> {
    pub proj: Linear<R>,
    pub camera: Linear<R>,
    pub tau: Linear<R>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<R> {
    patches: Array2<R>,
    geometry: Array2<R>,
    tau_feat: Array2<R>,
    dims: [usize; 4],
}

impl<R: Real> PatchEncoder<R> {
    pub fn new(c: usize, p: usize, rng: &mut impl Rng) -> Self {
        Self {
            proj: Linear::random(p * p * PIXEL_CHANNELS, c, rng),
            camera: Linear::random(GEOMETRY_DIM, c, rng),
            tau: Linear::random(c, c, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            proj: self.proj.zeros_like(),
            camera: self.camera.zeros_like(),
            tau: self.tau.zeros_like(),
        }
    }

    /// Camera-geometry embedding of each `(b, v)`, rows ordered `b·V + v`.
    pub fn camera_embedding(&self, geometry: &Array3<R>) -> Array2<R> {
        let (b, v, g) = geometry.dim();
        let flat = geometry.to_shape((b * v, g)).expect("contiguous").to_owned();
        self.camera.forward(&flat)
    }

    /// Encode `[B,V,T,H,W,10]` pixels into canonical-order tokens.
    /// `tau[b]` is the diffusion time of sample `b`; `time_index[t]` the
    /// temporal position of slot `t`.
    pub fn forward(
        &self,
        pixels: &ArrayView6<R>,
        p: usize,
        geometry: &Array3<R>,
        tau: &[f64],
        time_index: &[f64],
    ) -> (Array2<R>, EncoderCache<R>) {
        let (b, v, t, h, w, _) = pixels.dim();
        let c = self.proj.w.ncols();
        let (hp, wp) = (h / p, w / p);
        let n = hp * wp;
        let patches = patchify(pixels, p);
        let mut tokens = self.proj.forward(&patches);
        let geom = geometry.to_shape((b * v, GEOMETRY_DIM)).expect("contiguous").to_owned();
        let cam = self.camera.forward(&geom);
        let tau_feat = Array2::from_shape_fn((b, c), |(bi, j)| tau_features::<R>(tau[bi], c)[j]);
        let tau_emb = self.tau.forward(&tau_feat);
        let spatial = spatial_encoding::<R>(hp, wp, c);
        let times: Vec<Array1<R>> = time_index.iter().map(|&ti| sinusoid(ti, c)).collect();
        for bi in 0..b {
            for vi in 0..v {
                let add = &cam.row(bi * v + vi) + &tau_emb.row(bi);
                for (ti, te) in times.iter().enumerate() {
                    let base = ((bi * v + vi) * t + ti) * n;
                    let mut block = tokens.slice_mut(s![base..base + n, ..]);
                    block += &spatial;
                    block += &(&add + te);
                }
            }
        }
        let cache = EncoderCache {
            patches,
            geometry: geom,
            tau_feat,
            dims: [b, v, t, n],
        };
        (tokens, cache)
    }

    /// Accumulate parameter gradients from token gradients.
    pub fn backward(&self, cache: &EncoderCache<R>, dtokens: &Array2<R>, grad: &mut Self) {
        let [b, v, t, n] = cache.dims;
        let c = dtokens.ncols();
        self.proj.accumulate(&cache.patches, dtokens, &mut grad.proj);
        let per_view = dtokens
            .to_shape((b * v, t * n, c))
            .expect("contiguous")
            .sum_axis(Axis(1));
        self.camera.accumulate(&cache.geometry, &per_view, &mut grad.camera);
        let per_sample = per_view.to_shape((b, v, c)).expect("contiguous").sum_axis(Axis(1));
        self.tau.accumulate(&cache.tau_feat, &per_sample, &mut grad.tau);
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut TensorRefs<'a, R>) {
        self.proj.tensors(&format!("{prefix}.proj"), out);
        self.camera.tensors(&format!("{prefix}.camera"), out);
        self.tau.tensors(&format!("{prefix}.tau"), out);
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut TensorMuts<'a, R>) {
        self.proj.tensors_mut(&format!("{prefix}.proj"), out);
        self.camera.tensors_mut(&format!("{prefix}.camera"), out);
        self.tau.tensors_mut(&format!("{prefix}.tau"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_round_trip() {
        let pix = Array6::from_shape_fn((2, 3, 1, 16, 8, 3), |(a, b, c, d, e, f)| (a * 1000 + b * 100 + c * 10 + d * 7 + e * 3 + f) as f32);
        let rows = patchify(&pix.view(), 4);
        assert_eq!(rows.dim(), (2 * 3 * 8, 48));
        let back = unpatchify(&rows, [2, 3, 1, 16, 8], 4, 3);
        assert_eq!(back, pix);
    }

    #[test]
    fn token_count_for_default_resolution() {
        let pix = Array6::<f32>::zeros((1, 1, 1, 64, 64, PIXEL_CHANNELS));
        assert_eq!(patchify(&pix.view(), 8).nrows(), 64);
    }
}
