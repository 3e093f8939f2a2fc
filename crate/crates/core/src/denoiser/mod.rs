//! Temporal convolutional noise predictor `ε_θ(τ_t, t)`.
//!
//! The network treats a trajectory as a `d`-channel signal of length `H`,
//! plus one channel `s` holding the normalized waypoint index:
//!
//! ```text
//! x,s ─ 1×1 conv ─┬─ dilated conv + time bias ─ act ─(+)─ … ─ 1×1 conv ─ ε̂
//!               └──────────── residual ─────────────┘
//! ```
//!
//! Each block scales its convolution output per channel by `1 + γ(t)` and
//! adds a per-channel bias `β(t)`, both projected from a sinusoidal
//! embedding of the step index. The gains start at one. Convolutions are zero-padded so the temporal
//! length is preserved. The output projection starts at zero.
//!
//! Gradients are computed by hand; see [`DenoiserModel::backprop`].

mod checkpoint;
mod train;

pub use checkpoint::{decode_model, encode_model, load_model, save_model, CHECKPOINT_VERSION};
pub use train::{train, Adam, EpochRecord, LossProbe, TrainConfig, TrainReport};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, Normalizer, ScheduleConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Silu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub horizon: usize,
    pub state_dim: usize,
    /// Output width of each hidden block; the input projection uses the
    /// first entry.
    pub channels: Vec<usize>,
    /// Dilation of each block's convolution (same length as `channels`).
    pub dilations: Vec<usize>,
    pub kernel: usize,
    pub time_embedding_dim: usize,
    pub activation: Activation,
}

impl DenoiserConfig {
    /// Blocks with dilations 1, 2, 4, … so the receptive field spans `horizon`.
    pub fn for_shape(horizon: usize, state_dim: usize, width: usize) -> Self {
        let mut dilations = vec![1];
        while 1 + 2 * (2 * dilations.last().unwrap() - 1) < horizon {
            dilations.push(2 * dilations.last().unwrap());
        }
        DenoiserConfig {
            horizon,
            state_dim,
            channels: vec![width; dilations.len()],
            dilations,
            kernel: 3,
            time_embedding_dim: 32,
            activation: Activation::Silu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("denoiser needs at least one hidden layer".into()));
        }
        if self.dilations.len() != self.channels.len() {
            return Err(Error::Config("dilations and channels lengths differ".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel width must be odd, got {}", self.kernel)));
        }
        if self.horizon < 2 || self.state_dim == 0 || self.time_embedding_dim == 0 {
            return Err(Error::Config("degenerate denoiser shape".into()));
        }
        if !self.time_embedding_dim.is_multiple_of(2) {
            return Err(Error::Config("time embedding dimension must be even".into()));
        }
        if self.channels.contains(&0) || self.dilations.contains(&0) {
            return Err(Error::Config("channels and dilations must be positive".into()));
        }
        Ok(())
    }

    fn block_inputs(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.channels[0]).chain(self.channels.iter().copied())
    }

    fn layout(&self) -> Layout {
        let d = self.state_dim;
        let c0 = self.channels[0];
        let e = self.time_embedding_dim;
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let in_w = take(c0 * (d + 1));
        let in_b = take(c0);
        let blocks = self
            .block_inputs()
            .zip(&self.channels)
            .map(|(cin, &cout)| BlockLayout {
                cin,
                cout,
                w: take(cout * cin * self.kernel),
                b: take(cout),
                tw: take(cout * e),
                sb: take(cout),
                sw: take(cout * e),
            })
            .collect::<Vec<_>>();
        let cl = *self.channels.last().unwrap();
        let out_w = take(d * cl);
        let out_b = take(d);
        Layout {
            in_w,
            in_b,
            blocks,
            out_w,
            out_b,
            total: off,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Debug)]
struct BlockLayout {
    cin: usize,
    cout: usize,
    w: usize,
    b: usize,
    tw: usize,
    /// Bias and embedding weights of the per-channel gain `1 + γ(t)`.
    sb: usize,
    sw: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    in_w: usize,
    in_b: usize,
    blocks: Vec<BlockLayout>,
    out_w: usize,
    out_b: usize,
    total: usize,
}

/// Sinusoidal features `[sin(t ω_j), cos(t ω_j)]` with `ω_j = 10000^(−j/(E/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let w = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        let (s, c) = (t as f64 * w).sin_cos();
        out[j] = s;
        out[half + j] = c;
    }
    out
}

/// Trained (or freshly initialized) noise predictor with the data
/// normalization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub params: Vec<f64>,
    pub normalizer: Normalizer,
    pub schedule: ScheduleConfig,
    layout_total: usize,
}

/// Intermediate activations kept for the backward pass.
struct Tape {
    emb: Vec<f64>,
    /// Input to each block (and, last, to the output projection).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each block.
    pre: Vec<Vec<f64>>,
    /// Raw convolution output and per-channel gain of each block.
    conv: Vec<Vec<f64>>,
    gain: Vec<Vec<f64>>,
}

impl DenoiserModel {
    pub fn new<R: Rng + ?Sized>(
        config: DenoiserConfig,
        normalizer: Normalizer,
        schedule: ScheduleConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if normalizer.dim() != config.state_dim {
            return Err(Error::DimensionMismatch {
                expected: config.state_dim,
                got: normalizer.dim(),
            });
        }
        let layout = config.layout();
        let mut params = vec![0.0; layout.total];
        let mut uniform = |slice: &mut [f64], fan_in: usize, gain: f64| {
            let bound = gain / (fan_in as f64).sqrt();
            for p in slice {
                *p = rng.random_range(-bound..bound);
            }
        };
        let d = config.state_dim;
        let c0 = config.channels[0];
        uniform(&mut params[layout.in_w..layout.in_w + c0 * (d + 1)], d + 1, 1.0);
        for b in &layout.blocks {
            uniform(
                &mut params[b.w..b.w + b.cout * b.cin * config.kernel],
                b.cin * config.kernel,
                1.0,
            );
            uniform(
                &mut params[b.tw..b.tw + b.cout * config.time_embedding_dim],
                config.time_embedding_dim,
                1.0,
            );
        }
        let mut model = DenoiserModel {
            config,
            params,
            normalizer,
            schedule,
            layout_total: layout.total,
        };
        model.snap_to_f32();
        Ok(model)
    }

    pub(crate) fn from_parts(
        config: DenoiserConfig,
        params: Vec<f64>,
        normalizer: Normalizer,
        schedule: ScheduleConfig,
    ) -> Result<Self> {
        config.validate()?;
        let total = config.num_params();
        if params.len() != total {
            return Err(Error::Corrupt(format!(
                "expected {total} parameters, found {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("denoiser parameters".into()));
        }
        Ok(DenoiserModel {
            config,
            params,
            normalizer,
            schedule,
            layout_total: total,
        })
    }

    /// Round every parameter to the nearest `f32`, the precision checkpoints
    /// store, so a save/load round trip is exact.
    pub fn snap_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    /// Output projection weights followed by its biases.
    pub fn output_layer_mut(&mut self) -> &mut [f64] {
        let l = self.config.layout();
        &mut self.params[l.out_w..l.out_b + self.config.state_dim]
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        let want = (self.config.horizon, self.config.state_dim);
        if x.shape() != want {
            return Err(Error::ShapeMismatch {
                expected: want,
                got: x.shape(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &DMatrix<f64>, t: usize, keep: bool) -> (Vec<f64>, Option<Tape>) {
        let cfg = &self.config;
        let l = cfg.layout();
        let (h, d) = (cfg.horizon, cfg.state_dim);
        let p = &self.params;
        let emb = time_embedding(t, cfg.time_embedding_dim);

        // channel-major input [d][H]
        let xin = input_channels(x);
        let c0 = cfg.channels[0];
        let mut cur = vec![0.0; c0 * h];
        dense_forward(&p[l.in_w..], &p[l.in_b..], &xin, &mut cur, d + 1, c0, h);

        let mut tape = keep.then(|| Tape {
            emb: emb.clone(),
            inputs: Vec::with_capacity(l.blocks.len() + 1),
            pre: Vec::with_capacity(l.blocks.len()),
            conv: Vec::with_capacity(l.blocks.len()),
            gain: Vec::with_capacity(l.blocks.len()),
        });
        for (b, &dil) in l.blocks.iter().zip(&cfg.dilations) {
            let mut conv = vec![0.0; b.cout * h];
            conv_forward(&p[b.w..], &cur, &mut conv, b.cin, b.cout, cfg.kernel, dil, h);
            let mut pre = vec![0.0; b.cout * h];
            let mut gain = vec![0.0; b.cout];
            for o in 0..b.cout {
                let tb = p[b.b + o] + dot(&p[b.tw + o * emb.len()..], &emb);
                gain[o] = 1.0 + p[b.sb + o] + dot(&p[b.sw + o * emb.len()..], &emb);
                for (z, c) in pre[o * h..(o + 1) * h].iter_mut().zip(&conv[o * h..(o + 1) * h]) {
                    *z = gain[o] * c + tb;
                }
            }
            let mut next: Vec<f64> = pre.iter().map(|&v| cfg.activation.apply(v)).collect();
            if b.cin == b.cout {
                for (n, c) in next.iter_mut().zip(&cur) {
                    *n += c;
                }
            }
            if let Some(tp) = tape.as_mut() {
                tp.inputs.push(std::mem::take(&mut cur));
                tp.pre.push(pre);
                tp.conv.push(conv);
                tp.gain.push(gain);
            }
            cur = next;
        }
        let cl = *cfg.channels.last().unwrap();
        let mut out = vec![0.0; d * h];
        dense_forward(&p[l.out_w..], &p[l.out_b..], &cur, &mut out, cl, d, h);
        if let Some(tp) = tape.as_mut() {
            tp.inputs.push(cur);
        }
        (out, tape)
    }

    fn to_matrix(&self, chan_major: &[f64]) -> DMatrix<f64> {
        let h = self.config.horizon;
        DMatrix::from_fn(h, self.config.state_dim, |i, j| chan_major[j * h + i])
    }

    /// `ε_θ(τ_t, t)` in normalized trajectory space.
    pub fn eps_predict(&self, x: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(self.to_matrix(&self.forward(x, t, false).0))
    }

    /// Reverse-mode gradient of `⟨upstream, ε_θ(x, t)⟩` w.r.t. every parameter.
    pub fn backprop(&self, x: &DMatrix<f64>, t: usize, upstream: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_input(upstream)?;
        let (_, tape) = self.forward(x, t, true);
        Ok(self.backward(x, tape.unwrap(), upstream))
    }

    fn backward(&self, x: &DMatrix<f64>, tape: Tape, upstream: &DMatrix<f64>) -> Vec<f64> {
        let cfg = &self.config;
        let l = cfg.layout();
        let (h, d) = (cfg.horizon, cfg.state_dim);
        let p = &self.params;
        let mut grad = vec![0.0; self.layout_total];
        let up: Vec<f64> = (0..d).flat_map(|j| upstream.column(j).iter().copied().collect::<Vec<_>>()).collect();

        let cl = *cfg.channels.last().unwrap();
        let last_in = &tape.inputs[l.blocks.len()];
        let mut dcur = vec![0.0; cl * h];
        dense_backward(&p[l.out_w..], last_in, &up, &mut grad, l.out_w, l.out_b, &mut dcur, cl, d, h);

        for (bi, (b, &dil)) in l.blocks.iter().zip(&cfg.dilations).enumerate().rev() {
            let pre = &tape.pre[bi];
            let input = &tape.inputs[bi];
            let dpre: Vec<f64> = pre
                .iter()
                .zip(&dcur)
                .map(|(&z, &g)| g * cfg.activation.derivative(z))
                .collect();
            let mut dinput = if b.cin == b.cout { dcur.clone() } else { vec![0.0; b.cin * h] };
            let e = tape.emb.len();
            let conv = &tape.conv[bi];
            let gain = &tape.gain[bi];
            let mut dconv = vec![0.0; b.cout * h];
            for o in 0..b.cout {
                let rows = o * h..(o + 1) * h;
                let s: f64 = dpre[rows.clone()].iter().sum();
                let sg: f64 = dpre[rows.clone()].iter().zip(&conv[rows.clone()]).map(|(a, c)| a * c).sum();
                grad[b.b + o] += s;
                grad[b.sb + o] += sg;
                for (k, em) in tape.emb.iter().enumerate() {
                    grad[b.tw + o * e + k] += s * em;
                    grad[b.sw + o * e + k] += sg * em;
                }
                for (dc, g) in dconv[rows.clone()].iter_mut().zip(&dpre[rows]) {
                    *dc = gain[o] * g;
                }
            }
            conv_backward(&p[b.w..], input, &dconv, &mut grad[b.w..], &mut dinput, b.cin, b.cout, cfg.kernel, dil, h);
            dcur = dinput;
        }

        let xin = input_channels(x);
        let c0 = cfg.channels[0];
        let mut dx = vec![0.0; (d + 1) * h];
        dense_backward(&p[l.in_w..], &xin, &dcur, &mut grad, l.in_w, l.in_b, &mut dx, d + 1, c0, h);
        grad
    }
}

impl Denoiser for DenoiserModel {
    fn shape(&self) -> (usize, usize) {
        (self.config.horizon, self.config.state_dim)
    }

    fn predict(&self, tau_t: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
        self.eps_predict(tau_t, t)
    }

    fn num_params(&self) -> usize {
        self.layout_total
    }

    fn backprop(&self, tau_t: &DMatrix<f64>, t: usize, upstream: &DMatrix<f64>) -> Result<Vec<f64>> {
        DenoiserModel::backprop(self, tau_t, t, upstream)
    }

    fn squared_error_grad(&self, tau_t: &DMatrix<f64>, t: usize, target: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
        self.check_input(tau_t)?;
        self.check_input(target)?;
        let (out, tape) = self.forward(tau_t, t, true);
        let diff = self.to_matrix(&out) - target;
        let grads = self.backward(tau_t, tape.unwrap(), &(&diff * 2.0));
        Ok((diff.norm_squared(), grads))
    }
}

/// Channel-major copy of `x` followed by a waypoint-index channel running
/// linearly from −1 to 1.
fn input_channels(x: &DMatrix<f64>) -> Vec<f64> {
    let h = x.nrows();
    let mut out: Vec<f64> = Vec::with_capacity((x.ncols() + 1) * h);
    for j in 0..x.ncols() {
        out.extend(x.column(j).iter());
    }
    out.extend((0..h).map(|i| 2.0 * i as f64 / (h - 1) as f64 - 1.0));
    out
}

#[inline]
fn dot(w: &[f64], e: &[f64]) -> f64 {
    w.iter().zip(e).map(|(a, b)| a * b).sum()
}

/// 1×1 convolution: `out[o] = b[o] + Σ_i w[o·cin + i] · x[i]`.
fn dense_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64], cin: usize, cout: usize, h: usize) {
    for o in 0..cout {
        let row = &mut out[o * h..(o + 1) * h];
        row.fill(b[o]);
        for i in 0..cin {
            let wi = w[o * cin + i];
            for (r, xv) in row.iter_mut().zip(&x[i * h..(i + 1) * h]) {
                *r += wi * xv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    w: &[f64],
    x: &[f64],
    dout: &[f64],
    grad: &mut [f64],
    w_off: usize,
    b_off: usize,
    dx: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
) {
    for o in 0..cout {
        let go = &dout[o * h..(o + 1) * h];
        grad[b_off + o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * h..(i + 1) * h];
            grad[w_off + o * cin + i] += go.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            let wi = w[o * cin + i];
            for (d, g) in dx[i * h..(i + 1) * h].iter_mut().zip(go) {
                *d += wi * g;
            }
        }
    }
}

/// Range of output positions `h` for which `h + shift` is a valid input index.
#[inline]
fn valid_range(shift: isize, h: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (h as isize - shift.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// Zero-padded dilated convolution accumulated into `out`:
/// `out[o][h] += Σ_{i,k} w[o][i][k] · x[i][h + (k − K/2)·dil]`.
#[allow(clippy::too_many_arguments)]
fn conv_forward(w: &[f64], x: &[f64], out: &mut [f64], cin: usize, cout: usize, kernel: usize, dil: usize, h: usize) {
    let half = (kernel / 2) as isize;
    for o in 0..cout {
        let row = &mut out[o * h..(o + 1) * h];
        for i in 0..cin {
            let xi = &x[i * h..(i + 1) * h];
            for k in 0..kernel {
                let wv = w[(o * cin + i) * kernel + k];
                let shift = (k as isize - half) * dil as isize;
                let (lo, hi) = valid_range(shift, h);
                if lo >= hi {
                    continue;
                }
                let src = &xi[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                for (r, s) in row[lo..hi].iter_mut().zip(src) {
                    *r += wv * s;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    w: &[f64],
    x: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    dx: &mut [f64],
    cin: usize,
    cout: usize,
    kernel: usize,
    dil: usize,
    h: usize,
) {
    let half = (kernel / 2) as isize;
    for o in 0..cout {
        let go = &dout[o * h..(o + 1) * h];
        for i in 0..cin {
            let xi = &x[i * h..(i + 1) * h];
            for k in 0..kernel {
                let idx = (o * cin + i) * kernel + k;
                let shift = (k as isize - half) * dil as isize;
                let (lo, hi) = valid_range(shift, h);
                if lo >= hi {
                    continue;
                }
                let a = (lo as isize + shift) as usize;
                let b = (hi as isize + shift) as usize;
                dw[idx] += go[lo..hi].iter().zip(&xi[a..b]).map(|(g, v)| g * v).sum::<f64>();
                let wv = w[idx];
                for (d, g) in dx[i * h + a..i * h + b].iter_mut().zip(&go[lo..hi]) {
                    *d += wv * g;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_config(act: Activation) -> DenoiserConfig {
        DenoiserConfig {
            horizon: 8,
            state_dim: 2,
            channels: vec![4, 4, 3],
            dilations: vec![1, 2, 1],
            kernel: 3,
            time_embedding_dim: 4,
            activation: act,
        }
    }

    fn randomized(cfg: DenoiserConfig, seed: u64) -> DenoiserModel {
        let mut r = rng(seed);
        let mut m = DenoiserModel::new(cfg, Normalizer::identity(2), ScheduleConfig::default(), &mut r).unwrap();
        for p in m.output_layer_mut() {
            *p = r.random_range(-0.5..0.5);
        }
        m
    }

    fn random_matrix(h: usize, d: usize, r: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(h, d, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn deterministic_and_zero_initialized_output() {
        let cfg = DenoiserConfig::for_shape(16, 4, 8);
        let mut r = rng(0);
        let m = DenoiserModel::new(cfg, Normalizer::identity(4), ScheduleConfig::default(), &mut r).unwrap();
        let x = random_matrix(16, 4, &mut r);
        let a = m.eps_predict(&x, 3).unwrap();
        assert_eq!(a, m.eps_predict(&x, 3).unwrap());
        assert!(a.iter().all(|&v| v == 0.0));
        assert!(m.eps_predict(&random_matrix(15, 4, &mut r), 3).is_err());
    }

    #[test]
    fn output_depends_on_step() {
        let m = randomized(small_config(Activation::Silu), 1);
        let mut r = rng(2);
        let x = random_matrix(8, 2, &mut r);
        let outs: Vec<_> = (1..=25).map(|t| m.eps_predict(&x, t).unwrap()).collect();
        for i in 0..outs.len() {
            for j in i + 1..outs.len() {
                assert_ne!(outs[i], outs[j], "steps {} and {}", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn receptive_field_covers_horizon() {
        let cfg = DenoiserConfig::for_shape(64, 4, 8);
        let rf = 1 + cfg.dilations.iter().map(|d| 2 * d).sum::<usize>();
        assert!(rf >= 64, "{:?}", cfg.dilations);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let m = randomized(small_config(Activation::Tanh), 3);
        let mut r = rng(4);
        let x = random_matrix(8, 2, &mut r);
        let g = m.backprop(&x, 5, &DMatrix::zeros(8, 2)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_layer_gradient_is_outer_product() {
        // The output projection is linear in the last hidden activation, so
        // its weight gradient is Σ_h upstream[j][h] · hidden[c][h].
        let m = randomized(small_config(Activation::Relu), 5);
        let mut r = rng(6);
        let x = random_matrix(8, 2, &mut r);
        let up = random_matrix(8, 2, &mut r);
        let (_, tape) = m.forward(&x, 2, true);
        let hidden = tape.unwrap().inputs.pop().unwrap();
        let g = m.backprop(&x, 2, &up).unwrap();
        let l = m.config.layout();
        let cl = 3;
        for j in 0..2 {
            for c in 0..cl {
                let want: f64 = (0..8).map(|t| up[(t, j)] * hidden[c * 8 + t]).sum();
                assert!((g[l.out_w + j * cl + c] - want).abs() < 1e-12);
            }
            let want_b: f64 = (0..8).map(|t| up[(t, j)]).sum();
            assert!((g[l.out_b + j] - want_b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Silu, Activation::Tanh, Activation::Relu] {
            let mut m = randomized(small_config(act), 7);
            assert!(m.params.len() < 1000);
            let mut r = rng(8);
            let x = random_matrix(8, 2, &mut r);
            let up = random_matrix(8, 2, &mut r);
            let t = 4;
            let g = m.backprop(&x, t, &up).unwrap();
            let f = |m: &DenoiserModel| m.eps_predict(&x, t).unwrap().component_mul(&up).sum();
            let h = 1e-6;
            for i in 0..m.params.len() {
                let orig = m.params[i];
                m.params[i] = orig + h;
                let fp = f(&m);
                m.params[i] = orig - h;
                let fm = f(&m);
                m.params[i] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let tol = 1e-4 * fd.abs().max(g[i].abs()).max(1e-3);
                assert!((fd - g[i]).abs() <= tol, "{act:?} param {i}: fd {fd} vs {}", g[i]);
            }
        }
    }
}
