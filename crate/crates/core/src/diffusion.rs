//! Denoising diffusion over trajectories: noise schedules, the forward
//! kernel, the ε-parametrized reverse mean, cost-guided reverse sampling,
//! and the simplified training loss.
//!
//! Step indices run `1..=N`; `t = 1` is the last denoising step. With the
//! convention `ᾱ_0 = 1` the posterior variance `β̃_1` is zero, so the final
//! step is deterministic.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{total_cost_and_grad, CostSuite};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.9;
pub const DEFAULT_STEPS: usize = 25;
const COSINE_OFFSET: f64 = 0.008;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Exponential,
            steps: DEFAULT_STEPS,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.kind, self.steps, self.beta_min, self.beta_max)
    }
}

/// Per-step tables; entry `i` belongs to step `t = i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub beta_tilde: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// `beta_min`/`beta_max` bound the linear and exponential ramps; the
    /// cosine schedule derives β from its `ᾱ` curve and clips it to
    /// `[1e-8, 0.999]`.
    pub fn new(kind: ScheduleKind, n: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        let frac = |i: usize| if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..n)
                .map(|i| beta_min + (beta_max - beta_min) * frac(i))
                .collect(),
            ScheduleKind::Exponential => (0..n)
                .map(|i| beta_min * (beta_max / beta_min).powf(frac(i)))
                .collect(),
            ScheduleKind::Cosine => {
                let f = |t: f64| {
                    ((t / n as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2)
                        .cos()
                        .powi(2)
                };
                (1..=n)
                    .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(1e-8, 0.999))
                    .collect()
            }
        };
        Ok(Self::from_betas(kind, beta))
    }

    pub fn from_betas(kind: ScheduleKind, beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let beta_tilde: Vec<f64> = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])
            })
            .collect();
        let sigma = beta_tilde.iter().map(|b| b.sqrt()).collect();
        NoiseSchedule {
            kind,
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
            sigma,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "diffusion step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(t - 1)
    }

    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma_at(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            got: b.shape(),
        });
    }
    Ok(())
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Closed-form marginal: `τ_t = √ᾱ_t τ_0 + √(1−ᾱ_t) ε`.
pub fn forward_sample(schedule: &NoiseSchedule, tau0: &DMatrix<f64>, t: usize, eps: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let i = schedule.check_step(t)?;
    check_same_shape(tau0, eps)?;
    let ab = schedule.alpha_bar[i];
    Ok(tau0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// One step of the forward chain: `τ_t = √α_t τ_{t−1} + √β_t ε`.
pub fn forward_step(schedule: &NoiseSchedule, prev: &DMatrix<f64>, t: usize, eps: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let i = schedule.check_step(t)?;
    check_same_shape(prev, eps)?;
    Ok(prev * schedule.alpha[i].sqrt() + eps * schedule.beta[i].sqrt())
}

/// `μ = (τ_t − (1−α_t)/√(1−ᾱ_t) · ε̂) / √α_t`.
pub fn posterior_mean(schedule: &NoiseSchedule, tau_t: &DMatrix<f64>, t: usize, eps_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let i = schedule.check_step(t)?;
    check_same_shape(tau_t, eps_hat)?;
    let a = schedule.alpha[i];
    let coef = (1.0 - a) / (1.0 - schedule.alpha_bar[i]).sqrt();
    Ok((tau_t - eps_hat * coef) / a.sqrt())
}

/// `τ_{t−1} = μ + σ_t z`; at `t = 1` the noise is dropped.
pub fn reverse_step(schedule: &NoiseSchedule, mu: &DMatrix<f64>, t: usize, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let i = schedule.check_step(t)?;
    check_same_shape(mu, z)?;
    if t == 1 {
        return Ok(mu.clone());
    }
    Ok(mu + z * schedule.sigma[i])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// Shift the mean by `g` instead of `σ_t² g`.
    pub drop_sigma_scaling: bool,
    /// Cost evaluations per denoising step; their gradients are summed.
    pub guide_steps_per_denoise: usize,
    /// Skip guidance for steps `t > guide_from_step` (0 = always guide).
    pub guide_from_step: usize,
    /// Norm cap applied per row of `g` in normalized units; 0 disables.
    pub max_row_norm: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            drop_sigma_scaling: true,
            guide_steps_per_denoise: 1,
            guide_from_step: 0,
            max_row_norm: 0.0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.guide_steps_per_denoise == 0 {
            return Err(Error::Config("guide_steps_per_denoise must be >= 1".into()));
        }
        if !(self.max_row_norm >= 0.0) {
            return Err(Error::Config("max_row_norm must be >= 0".into()));
        }
        Ok(())
    }

    fn active_at(&self, t: usize) -> bool {
        self.guide_from_step == 0 || t <= self.guide_from_step
    }
}

/// Start and goal rows that are written into every intermediate sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Endpoints {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
}

impl Endpoints {
    pub fn apply(&self, tau: &mut DMatrix<f64>) {
        let h = tau.nrows();
        for (j, v) in self.start.iter().enumerate() {
            tau[(0, j)] = *v;
        }
        for (j, v) in self.goal.iter().enumerate() {
            tau[(h - 1, j)] = *v;
        }
    }
}

/// `τ_{t−1} = μ_t + shift + σ_t z`, then endpoints hard-set, where the shift
/// is `g` (scaling dropped) or `σ_t² g`.
pub fn guided_reverse_step(
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
    mu: &DMatrix<f64>,
    g: &DMatrix<f64>,
    t: usize,
    z: &DMatrix<f64>,
    endpoints: Option<&Endpoints>,
) -> Result<DMatrix<f64>> {
    let i = schedule.check_step(t)?;
    check_same_shape(mu, g)?;
    let scale = if guidance.drop_sigma_scaling {
        1.0
    } else {
        schedule.beta_tilde[i]
    };
    let shifted = mu + g * scale;
    let mut out = reverse_step(schedule, &shifted, t, z)?;
    if let Some(e) = endpoints {
        e.apply(&mut out);
    }
    Ok(out)
}

/// A noise-prediction network `ε_θ(τ_t, t)`.
pub trait Denoiser: Sync {
    /// `(H, d)` of the trajectories it accepts.
    fn shape(&self) -> (usize, usize);

    fn predict(&self, tau_t: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>>;

    fn num_params(&self) -> usize {
        0
    }

    /// Gradient of `⟨upstream, ε_θ(τ_t, t)⟩` w.r.t. the parameters.
    fn backprop(&self, _tau_t: &DMatrix<f64>, _t: usize, _upstream: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    /// `‖target − ε_θ(τ_t, t)‖²` and its parameter gradient.
    fn squared_error_grad(&self, tau_t: &DMatrix<f64>, t: usize, target: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
        let pred = self.predict(tau_t, t)?;
        let diff = pred - target;
        let grads = self.backprop(tau_t, t, &(&diff * 2.0))?;
        Ok((diff.norm_squared(), grads))
    }
}

/// Per-dimension affine map of the data range onto `[−1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn identity(d: usize) -> Self {
        Normalizer {
            min: vec![-1.0; d],
            max: vec![1.0; d],
        }
    }

    pub fn fit<'a>(data: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Result<Self> {
        let mut it = data.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::InvalidArgument("cannot fit normalizer on no data".into()))?;
        let d = first.ncols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for m in std::iter::once(first).chain(it) {
            for j in 0..d {
                for v in m.column(j).iter() {
                    min[j] = min[j].min(*v);
                    max[j] = max[j].max(*v);
                }
            }
        }
        for j in 0..d {
            if max[j] - min[j] < 1e-9 {
                min[j] -= 1.0;
                max[j] += 1.0;
            }
        }
        Ok(Normalizer { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Half-range per column, i.e. `d(original)/d(normalized)`.
    pub fn scale(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(a, b)| (b - a) / 2.0).collect()
    }

    fn center(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(a, b)| (a + b) / 2.0).collect()
    }

    pub fn normalize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (s, c) = (self.scale(), self.center());
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - c[j]) / s[j])
    }

    pub fn denormalize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (s, c) = (self.scale(), self.center());
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * s[j] + c[j])
    }

    pub fn normalize_row(&self, row: &[f64]) -> Vec<f64> {
        let (s, c) = (self.scale(), self.center());
        row.iter().enumerate().map(|(j, v)| (v - c[j]) / s[j]).collect()
    }
}

/// Everything the guided sampler needs besides the denoiser.
pub struct SamplerSetup<'a> {
    pub schedule: &'a NoiseSchedule,
    pub guidance: &'a GuidanceConfig,
    pub normalizer: &'a Normalizer,
    /// `None` samples the unguided prior.
    pub suite: Option<&'a CostSuite>,
    pub dt: f64,
}

/// Guidance direction in normalized coordinates for a normalized sample:
/// the cost gradient is taken in original units and chained through the
/// denormalization.
fn guidance_direction(setup: &SamplerSetup<'_>, suite: &CostSuite, mu: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = setup.normalizer.scale();
    let x = setup.normalizer.denormalize(mu);
    let (_, g) = total_cost_and_grad(suite, &x)?;
    let mut g = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * scale[j]);
    if setup.guidance.max_row_norm > 0.0 {
        for mut row in g.row_iter_mut() {
            let n = row.norm();
            if n > setup.guidance.max_row_norm {
                row *= setup.guidance.max_row_norm / n;
            }
        }
    }
    Ok(g)
}

/// Guided reverse diffusion for one batch element, from `τ_N ~ N(0, I)`.
/// Intermediate samples live in normalized space; the returned trajectory
/// is denormalized with its endpoints overwritten by `start`/`goal`.
pub fn mpd_sample_one<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    setup: &SamplerSetup<'_>,
    denoiser: &D,
    start: &[f64],
    goal: &[f64],
    rng: &mut R,
) -> Result<Trajectory> {
    let (h, d) = denoiser.shape();
    if setup.normalizer.dim() != d || start.len() != d || goal.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: start.len().min(goal.len()).min(setup.normalizer.dim()),
        });
    }
    setup.guidance.validate()?;
    let n = setup.schedule.steps();
    let ends = Endpoints {
        start: setup.normalizer.normalize_row(start),
        goal: setup.normalizer.normalize_row(goal),
    };
    let mut tau = standard_normal(h, d, rng);
    ends.apply(&mut tau);
    for t in (1..=n).rev() {
        let eps_hat = denoiser.predict(&tau, t)?;
        let mu = posterior_mean(setup.schedule, &tau, t, &eps_hat)?;
        let g = match setup.suite {
            Some(suite) if setup.guidance.active_at(t) => {
                let mut acc = DMatrix::zeros(h, d);
                let mut probe = mu.clone();
                for _ in 0..setup.guidance.guide_steps_per_denoise {
                    let step = guidance_direction(setup, suite, &probe)?;
                    probe += &step;
                    acc += step;
                }
                acc
            }
            _ => DMatrix::zeros(h, d),
        };
        let z = standard_normal(h, d, rng);
        tau = guided_reverse_step(setup.schedule, setup.guidance, &mu, &g, t, &z, Some(&ends))?;
    }
    let mut states = setup.normalizer.denormalize(&tau);
    for j in 0..d {
        states[(0, j)] = start[j];
        states[(h - 1, j)] = goal[j];
    }
    Trajectory::new(states, setup.dt)
}

/// Batch version of [`mpd_sample_one`]. Element `b` uses its own RNG
/// stream seeded from `seed` so results do not depend on thread count.
pub fn mpd_sample<D: Denoiser + ?Sized>(
    setup: &SamplerSetup<'_>,
    denoiser: &D,
    start: &[f64],
    goal: &[f64],
    batch: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    use rand::SeedableRng;
    (0..batch)
        .into_par_iter()
        .map(|b| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            mpd_sample_one(setup, denoiser, start, goal, &mut rng)
        })
        .collect()
}

/// Monte-Carlo estimate of the simplified loss `E‖ε − ε_θ(τ_t, t)‖²` over a
/// batch of normalized trajectories, with its parameter gradient.
pub fn training_loss<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    batch: &[&DMatrix<f64>],
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let (h, d) = denoiser.shape();
    let draws: Vec<(usize, DMatrix<f64>)> = batch
        .iter()
        .map(|_| {
            let t = rng.random_range(1..=schedule.steps());
            (t, standard_normal(h, d, rng))
        })
        .collect();
    let per: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(tau0, (t, eps))| {
            let tau_t = forward_sample(schedule, tau0, *t, eps)?;
            denoiser.squared_error_grad(&tau_t, *t, eps)
        })
        .collect::<Result<_>>()?;
    let m = batch.len() as f64;
    let mut grads = vec![0.0; denoiser.num_params()];
    let mut loss = 0.0;
    for (l, g) in per {
        loss += l / m;
        for (a, b) in grads.iter_mut().zip(g) {
            *a += b / m;
        }
    }
    Ok((loss, grads))
}
