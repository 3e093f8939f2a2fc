use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{save_model, DenoiserModel};
use crate::diffusion::{forward_sample, standard_normal, training_loss, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Optimizer steps between validation passes; 0 means one pass over
    /// the training set.
    pub steps_per_epoch: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Anneal the learning rate to zero over `max_steps` along a half cosine.
    pub cosine_decay: bool,
    /// Fixed `(t, ε)` draws per validation trajectory.
    pub val_draws: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 32,
            max_steps: 10_000,
            steps_per_epoch: 0,
            patience: 10,
            cosine_decay: true,
            val_draws: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_steps == 0 || self.patience == 0 || self.val_draws == 0 {
            return Err(Error::Config("training settings must all be positive".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Descent step `θ ← θ − lr · m̂ / (√v̂ + eps)`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub stopped_early: bool,
    pub best_val_loss: Option<f64>,
}

/// Fixed noise draws used to score a model on a set of trajectories.
pub struct LossProbe {
    draws: Vec<(usize, usize, DMatrix<f64>)>,
}

impl LossProbe {
    pub fn new(schedule: &NoiseSchedule, data: &[DMatrix<f64>], per_item: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draws = Vec::with_capacity(data.len() * per_item);
        for (i, x) in data.iter().enumerate() {
            for _ in 0..per_item {
                let t = rng.random_range(1..=schedule.steps());
                draws.push((i, t, standard_normal(x.nrows(), x.ncols(), &mut rng)));
            }
        }
        LossProbe { draws }
    }

    /// Mean `‖ε − ε_θ(τ_t, t)‖²` over the fixed draws.
    pub fn evaluate<D: Denoiser + ?Sized>(&self, schedule: &NoiseSchedule, model: &D, data: &[DMatrix<f64>]) -> Result<f64> {
        use rayon::prelude::*;
        let total: f64 = self
            .draws
            .par_iter()
            .map(|(i, t, eps)| {
                let tau_t = forward_sample(schedule, &data[*i], *t, eps)?;
                Ok((model.predict(&tau_t, *t)? - eps).norm_squared())
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .sum();
        Ok(total / self.draws.len().max(1) as f64)
    }
}

/// Minibatch training on normalized trajectories with early stopping on
/// the validation loss. On return `model` holds the parameters with the best
/// validation loss (or the final ones without a validation set). Each epoch
/// is written to `log` as one JSON line; the model is saved to `checkpoint`
/// when given.
pub fn train(
    train_set: &[DMatrix<f64>],
    val_set: &[DMatrix<f64>],
    schedule: &NoiseSchedule,
    model: &mut DenoiserModel,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let shape = model.shape();
    if let Some(bad) = train_set.iter().chain(val_set).find(|x| x.shape() != shape) {
        return Err(Error::ShapeMismatch {
            expected: shape,
            got: bad.shape(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let probe = (!val_set.is_empty()).then(|| LossProbe::new(schedule, val_set, cfg.val_draws, cfg.seed ^ 0x9e37_79b9));
    let steps_per_epoch = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        train_set.len().div_ceil(cfg.batch_size)
    };
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate);
    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut step = 0;
    let mut stopped_early = false;
    let mut epoch = 0;
    while step < cfg.max_steps {
        let mut acc = 0.0;
        let mut n = 0;
        for _ in 0..steps_per_epoch {
            if step >= cfg.max_steps {
                break;
            }
            let batch: Vec<&DMatrix<f64>> = (0..cfg.batch_size)
                .map(|_| &train_set[rng.random_range(0..train_set.len())])
                .collect();
            let (loss, grads) = training_loss(schedule, &*model, &batch, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {step}")));
            }
            if cfg.cosine_decay {
                let frac = step as f64 / cfg.max_steps as f64;
                adam.lr = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
            }
            adam.update(&mut model.params, &grads);
            model.snap_to_f32();
            acc += loss;
            n += 1;
            step += 1;
        }
        let val_loss = probe.as_ref().map(|p| p.evaluate(schedule, &*model, val_set)).transpose()?;
        let record = EpochRecord {
            epoch,
            step,
            train_loss: acc / n.max(1) as f64,
            val_loss,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        history.push(record);
        epoch += 1;
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let best_val_loss = best.as_ref().map(|(v, _)| *v);
    if let Some((_, params)) = best {
        model.params = params;
    }
    if let Some(path) = checkpoint {
        save_model(model, path)?;
    }
    Ok(TrainReport {
        history,
        steps: step,
        stopped_early,
        best_val_loss,
    })
}
