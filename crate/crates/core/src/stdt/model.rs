use ndarray::{s, Array2, Array3, Array6, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::block::{BlockCache, BlockSwitches, InterleavedBlock};
use super::encoder::{patchify, unpatchify, EncoderCache, PatchEncoder, GEOMETRY_DIM, GUIDANCE_CHANNELS, PIXEL_CHANNELS};
use super::grid::LatentGrid;
use super::smooth::GaussianSmoother;
use super::nn::{LayerNorm, Linear, LnCache, TensorMuts, TensorRefs};
use super::Real;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub blocks: usize,
    pub heads: usize,
    pub patch: usize,
    /// History slots per sample.
    pub history: usize,
    /// Current-window length the model is trained on.
    pub t_cur: usize,
    /// Only 0 is supported.
    pub dropout: f64,
    pub seed: u64,
    /// Width of the alignment head output.
    pub geo_channels: usize,
    /// Block whose taps feed the alignment head; `None` means `blocks / 2`.
    pub align_tap: Option<usize>,
    pub temporal_attention: bool,
    pub spatial_attention: bool,
    /// When false the depth and semantic input channels are zeroed.
    pub use_guidance: bool,
    #[serde(default)]
    pub output: OutputMode,
    /// Gaussian σ in pixels applied to the clean-residual readout; 0 disables.
    #[serde(default = "default_residual_smoothing")]
    pub residual_smoothing: f64,
}

fn default_residual_smoothing() -> f64 {
    3.0
}

/// What the readout produces before it becomes a velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// The readout is the velocity.
    Velocity,
    /// The readout is a residual `r` on the corrupted frame: the clean
    /// estimate is `x̂₀ = corrupted + r` and the velocity is
    /// `(x_τ − x̂₀) / max(τ, TAU_FLOOR)`. The noisy frame enters the model
    /// scaled by `1 − τ`, so at `τ = 1` the estimate depends on the
    /// conditioning alone. `r` is smoothed by a fixed Gaussian of
    /// `residual_smoothing` pixels, which keeps patch seams out of it.
    #[default]
    CleanResidual,
}

/// Smallest denominator used when converting a clean estimate to a velocity.
pub const TAU_FLOOR: f64 = 0.05;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 128,
            blocks: 6,
            heads: 4,
            patch: 8,
            history: 2,
            t_cur: 1,
            dropout: 0.0,
            seed: 0,
            geo_channels: 64,
            align_tap: None,
            temporal_attention: true,
            spatial_attention: true,
            use_guidance: true,
            output: OutputMode::CleanResidual,
            residual_smoothing: default_residual_smoothing(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.blocks == 0 || self.heads == 0 || self.patch == 0 || self.t_cur == 0 {
            return Err(Error::config("channels, blocks, heads, patch and t_cur must be positive"));
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if !self.channels.is_multiple_of(4) {
            return Err(Error::config("channels must be a multiple of 4 for the positional encodings"));
        }
        if self.dropout != 0.0 {
            return Err(Error::config("dropout is not supported; set it to 0"));
        }
        if !(self.residual_smoothing.is_finite() && self.residual_smoothing >= 0.0) {
            return Err(Error::config("residual_smoothing must be finite and non-negative"));
        }
        if self.geo_channels == 0 {
            return Err(Error::config("geo_channels must be positive"));
        }
        if let Some(tap) = self.align_tap {
            if tap >= self.blocks {
                return Err(Error::config(format!("align_tap {tap} outside 0..{}", self.blocks)));
            }
        }
        Ok(())
    }

    pub fn tap_block(&self) -> usize {
        self.align_tap.unwrap_or(self.blocks / 2).min(self.blocks - 1)
    }

    pub fn switches(&self) -> BlockSwitches {
        BlockSwitches {
            temporal: self.temporal_attention,
            spatial: self.spatial_attention,
        }
    }
}

/// History frames with their guidance, `[B,V,h,H,W,·]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryInput<R> {
    pub frames: Array6<R>,
    pub guidance: Array6<R>,
}

/// Everything one denoiser evaluation consumes. Images are in the model's
/// data range [−1, 1]; guidance is depth/far-plane followed by the semantic
/// one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserInput<R> {
    /// `[B,V,T,H,W,3]`
    pub noisy: Array6<R>,
    /// `[B,V,T,H,W,3]`
    pub corrupted: Array6<R>,
    /// `[B,V,T,H,W,4]`
    pub guidance: Array6<R>,
    pub history: Option<HistoryInput<R>>,
    /// `[B,V,16]` camera geometry vectors.
    pub geometry: Array3<R>,
    /// Diffusion time per sample.
    pub tau: Vec<f64>,
    /// Temporal position of each current slot; history sits at −h..−1.
    pub time_index: Vec<f64>,
}

impl<R: Real> DenoiserInput<R> {
    pub fn dims(&self) -> [usize; 5] {
        let (b, v, t, h, w, _) = self.noisy.dim();
        [b, v, t, h, w]
    }

    pub fn history_len(&self) -> usize {
        self.history.as_ref().map_or(0, |h| h.frames.dim().2)
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserOutput<R> {
    /// Predicted velocity, `[B,V,T,H,W,3]`.
    pub prediction: Array6<R>,
    /// Alignment-head features at the two taps, rows in canonical token
    /// order, present only from [`Denoiser::forward_train`].
    pub align: Option<(Array2<R>, Array2<R>)>,
}

#[derive(Debug, Clone)]
pub struct DenoiserCache<R> {
    dims: [usize; 5],
    enc: EncoderCache<R>,
    enc_hist: Option<EncoderCache<R>>,
    history_tokens: Option<Array2<R>>,
    blocks: Vec<BlockCache<R>>,
    taps: (Array2<R>, Array2<R>),
    ln_f: LnCache<R>,
    /// Per-sample velocity denominators in clean-residual mode.
    denom: Option<Vec<f64>>,
}

impl<R> DenoiserCache<R> {
    /// `[B,V,T,H,W]` of the evaluated input.
    pub fn dims(&self) -> [usize; 5] {
        self.dims
    }

    /// Encoded history tokens as consumed by every block.
    pub fn history_tokens(&self) -> Option<&Array2<R>> {
        self.history_tokens.as_ref()
    }
}

/// L interleaved blocks between a patch encoder and a linear readout, plus
/// the alignment projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<R> {
    pub config: ModelConfig,
    pub encoder: PatchEncoder<R>,
    pub blocks: Vec<InterleavedBlock<R>>,
    pub ln_f: LayerNorm<R>,
    pub readout: Linear<R>,
    pub align_head: Linear<R>,
}

impl<R: Real> Denoiser<R> {
    /// Seeded initialisation. Attention and MLP output projections and the
    /// readout start at zero.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut r = rng::stream(config.seed, "stdt/init");
        let encoder = PatchEncoder::new(c, config.patch, &mut r);
        let blocks = (0..config.blocks).map(|_| InterleavedBlock::new(c, config.heads, &mut r)).collect();
        let align_head = Linear::random(c, config.geo_channels, &mut r);
        Ok(Self {
            config: config.clone(),
            encoder,
            blocks,
            ln_f: LayerNorm::new(c),
            readout: Linear::zeros(c, config.patch * config.patch * 3),
            align_head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            encoder: self.encoder.zeros_like(),
            blocks: self.blocks.iter().map(InterleavedBlock::zeros_like).collect(),
            ln_f: self.ln_f.zeros_like(),
            readout: self.readout.zeros_like(),
            align_head: self.align_head.zeros_like(),
        }
    }

    pub fn tensors(&self) -> TensorRefs<'_, R> {
        let mut out = Vec::new();
        self.encoder.tensors("encoder", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.tensors(&format!("blocks.{i}"), &mut out);
        }
        self.ln_f.tensors("ln_f", &mut out);
        self.readout.tensors("readout", &mut out);
        self.align_head.tensors("align_head", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> TensorMuts<'_, R> {
        let mut out = Vec::new();
        self.encoder.tensors_mut("encoder", &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.tensors_mut(&format!("blocks.{i}"), &mut out);
        }
        self.ln_f.tensors_mut("ln_f", &mut out);
        self.readout.tensors_mut("readout", &mut out);
        self.align_head.tensors_mut("align_head", &mut out);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn validate_input(&self, input: &DenoiserInput<R>) -> Result<()> {
        let [b, v, t, h, w] = input.dims();
        let p = self.config.patch;
        if input.noisy.dim().5 != 3 {
            return Err(Error::shape("noisy channels", 3, input.noisy.dim().5));
        }
        if [b, v, t, h, w].contains(&0) {
            return Err(Error::shape("noisy dims", "all > 0", format!("{:?}", input.noisy.shape())));
        }
        if h % p != 0 || w % p != 0 {
            return Err(Error::shape("image size", format!("multiples of patch {p}"), format!("{h}x{w}")));
        }
        if input.corrupted.shape() != input.noisy.shape() {
            return Err(Error::shape("corrupted", format!("{:?}", input.noisy.shape()), format!("{:?}", input.corrupted.shape())));
        }
        let expect_g = [b, v, t, h, w, GUIDANCE_CHANNELS];
        if input.guidance.shape() != expect_g {
            return Err(Error::shape("guidance", format!("{expect_g:?}"), format!("{:?}", input.guidance.shape())));
        }
        if input.geometry.shape() != [b, v, GEOMETRY_DIM] {
            return Err(Error::shape(
                "geometry",
                format!("{:?}", [b, v, GEOMETRY_DIM]),
                format!("{:?}", input.geometry.shape()),
            ));
        }
        if input.tau.len() != b {
            return Err(Error::shape("tau batch", b, input.tau.len()));
        }
        if let Some(bad) = input.tau.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::config(format!("diffusion time {bad} outside [0, 1]")));
        }
        if input.time_index.len() != t {
            return Err(Error::shape("time_index", t, input.time_index.len()));
        }
        if let Some(hist) = &input.history {
            let (hb, hv, hh, hy, hx, hc) = hist.frames.dim();
            if hv != v {
                return Err(Error::shape("history views", v, hv));
            }
            if (hb, hy, hx, hc) != (b, h, w, 3) {
                return Err(Error::shape("history frames", format!("{:?}", [b, v, hh, h, w, 3]), format!("{:?}", hist.frames.shape())));
            }
            let expect = [b, v, hh, h, w, GUIDANCE_CHANNELS];
            if hist.guidance.shape() != expect {
                return Err(Error::shape("history guidance", format!("{expect:?}"), format!("{:?}", hist.guidance.shape())));
            }
        }
        if input.history_len() != self.config.history {
            return Err(Error::shape("history length", self.config.history, input.history_len()));
        }
        Ok(())
    }

    fn pixels(&self, x: &Array6<R>, cond: &Array6<R>, guide: &Array6<R>) -> Array6<R> {
        let (b, v, t, h, w, _) = x.dim();
        let mut pix = Array6::zeros((b, v, t, h, w, PIXEL_CHANNELS));
        pix.slice_mut(s![.., .., .., .., .., 0..3]).assign(x);
        pix.slice_mut(s![.., .., .., .., .., 3..6]).assign(cond);
        if self.config.use_guidance {
            pix.slice_mut(s![.., .., .., .., .., 6..10]).assign(guide);
        }
        pix
    }

    fn run(&self, input: &DenoiserInput<R>) -> Result<(DenoiserOutput<R>, DenoiserCache<R>)> {
        self.validate_input(input)?;
        let [b, v, t, h, w] = input.dims();
        let p = self.config.patch;
        let n = (h / p) * (w / p);
        let pix = match self.config.output {
            OutputMode::Velocity => self.pixels(&input.noisy, &input.corrupted, &input.guidance),
            OutputMode::CleanResidual => {
                let mut gated = input.noisy.clone();
                for (bi, &tau) in input.tau.iter().enumerate() {
                    let g = R::lit(1.0 - tau);
                    gated.slice_mut(s![bi, .., .., .., .., ..]).mapv_inplace(|z| z * g);
                }
                self.pixels(&gated, &input.corrupted, &input.guidance)
            }
        };
        let (tokens, enc) = self.encoder.forward(&pix.view(), p, &input.geometry, &input.tau, &input.time_index);
        let (history_tokens, enc_hist) = match &input.history {
            Some(hist) if self.config.history > 0 => {
                let hp = self.pixels(&hist.frames, &hist.frames, &hist.guidance);
                let hlen = self.config.history as i64;
                let idx: Vec<f64> = (-hlen..0).map(|i| i as f64).collect();
                let (ht, hc) = self.encoder.forward(&hp.view(), p, &input.geometry, &vec![0.0; b], &idx);
                (Some(ht), Some(hc))
            }
            _ => (None, None),
        };
        let mut x = LatentGrid::new(tokens, [b, v, t, n])?;
        if !x.is_finite() {
            return Err(Error::NonFinite { stage: "patch encoder".into() });
        }
        let tap_block = self.config.tap_block();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut taps = None;
        for (i, block) in self.blocks.iter().enumerate() {
            let (y, cache, tp) = block.forward(&x, history_tokens.as_ref(), self.config.switches());
            if !y.is_finite() {
                return Err(Error::NonFinite { stage: format!("block {i}") });
            }
            if i == tap_block {
                taps = Some((tp.after_temporal, tp.after_spatial));
            }
            caches.push(cache);
            x = y;
        }
        let (nf, ln_f) = self.ln_f.forward(&x.data);
        let rows = self.readout.forward(&nf);
        let mut prediction = unpatchify(&rows, [b, v, t, h, w], p, 3);
        let denom = match self.config.output {
            OutputMode::Velocity => None,
            OutputMode::CleanResidual => {
                if let Some(sm) = GaussianSmoother::new(self.config.residual_smoothing) {
                    sm.apply(&mut prediction);
                }
                let denom: Vec<f64> = input.tau.iter().map(|&tau| tau.max(TAU_FLOOR)).collect();
                for (bi, &dn) in denom.iter().enumerate() {
                    let inv = R::lit(1.0 / dn);
                    Zip::from(prediction.slice_mut(s![bi, .., .., .., .., ..]))
                        .and(input.noisy.slice(s![bi, .., .., .., .., ..]))
                        .and(input.corrupted.slice(s![bi, .., .., .., .., ..]))
                        .for_each(|o, &x, &c| *o = (x - c - *o) * inv);
                }
                Some(denom)
            }
        };
        if prediction.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite { stage: "readout".into() });
        }
        let taps = taps.expect("tap block within range");
        let cache = DenoiserCache {
            dims: [b, v, t, h, w],
            enc,
            enc_hist,
            history_tokens,
            blocks: caches,
            taps,
            ln_f,
            denom,
        };
        Ok((DenoiserOutput { prediction, align: None }, cache))
    }

    /// Evaluation forward pass.
    pub fn forward(&self, input: &DenoiserInput<R>) -> Result<Array6<R>> {
        Ok(self.run(input)?.0.prediction)
    }

    /// Forward pass keeping everything needed by [`Denoiser::backward`],
    /// including alignment-head features at the tap block.
    pub fn forward_train(&self, input: &DenoiserInput<R>) -> Result<(DenoiserOutput<R>, DenoiserCache<R>)> {
        let (mut out, cache) = self.run(input)?;
        out.align = Some((
            self.align_head.forward(&cache.taps.0),
            self.align_head.forward(&cache.taps.1),
        ));
        Ok((out, cache))
    }

    /// Parameter gradients given `dL/dprediction` and optionally the
    /// gradients of the two alignment feature matrices.
    pub fn backward(
        &self,
        cache: &DenoiserCache<R>,
        dprediction: &Array6<R>,
        dalign: Option<(&Array2<R>, &Array2<R>)>,
    ) -> Self {
        let mut grad = self.zeros_like();
        let p = self.config.patch;
        let drows = match &cache.denom {
            None => patchify(&dprediction.view(), p),
            Some(denom) => {
                let mut dres = dprediction.clone();
                for (bi, &dn) in denom.iter().enumerate() {
                    dres.slice_mut(s![bi, .., .., .., .., ..]).mapv_inplace(|g| -g * R::lit(1.0 / dn));
                }
                if let Some(sm) = GaussianSmoother::new(self.config.residual_smoothing) {
                    sm.apply_transpose(&mut dres);
                }
                patchify(&dres.view(), p)
            }
        };
        let nf = cache.ln_f.xhat() * &self.ln_f.gamma + &self.ln_f.beta;
        let dnf = self.readout.backward(&nf, &drows, &mut grad.readout);
        let mut d = self.ln_f.backward(&cache.ln_f, &dnf, &mut grad.ln_f);
        let dtaps = dalign.map(|(da, db)| {
            let dt = self.align_head.backward(&cache.taps.0, da, &mut grad.align_head);
            let ds = self.align_head.backward(&cache.taps.1, db, &mut grad.align_head);
            (dt, ds)
        });
        let tap_block = self.config.tap_block();
        let mut dhist: Option<Array2<R>> = None;
        for (i, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let taps = if i == tap_block {
                dtaps.as_ref().map(|(a, b)| (a, b))
            } else {
                None
            };
            let (dx, dh) = block.backward(bc, &d, taps, &mut grad.blocks[i]);
            d = dx;
            if let Some(dh) = dh {
                match dhist.as_mut() {
                    Some(acc) => *acc += &dh,
                    None => dhist = Some(dh),
                }
            }
        }
        self.encoder.backward(&cache.enc, &d, &mut grad.encoder);
        if let (Some(hc), Some(dh)) = (&cache.enc_hist, dhist) {
            self.encoder.backward(hc, &dh, &mut grad.encoder);
        }
        grad
    }

    /// Number of current tokens for input dims `[B,V,T,H,W]`.
    pub fn token_count(&self, dims: [usize; 5]) -> usize {
        let [b, v, t, h, w] = dims;
        b * v * t * (h / self.config.patch) * (w / self.config.patch)
    }
}

/// Sample `b` as a batch of one.
pub fn batch_slice<R: Real>(a: &Array6<R>, b: usize) -> Array6<R> {
    a.slice(s![b..b + 1, .., .., .., .., ..]).to_owned()
}

/// Concatenate samples along the batch axis.
pub fn stack_batch<R: Real>(parts: &[Array6<R>]) -> Array6<R> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("consistent sample shapes")
}
