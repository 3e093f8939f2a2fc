use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{total_cost, total_cost_and_full_grad, CostKind, CostSuite};
use crate::error::{Error, Result};
use crate::trajectory::{GpParams, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpmpParams {
    pub iterations: usize,
    /// Largest step along the preconditioned direction; a step of 1 is a
    /// Newton step on the GP term alone.
    pub step_size: f64,
    /// Stop once one iteration lowers the cost by less than
    /// `tolerance · max(1, |cost|)`.
    pub tolerance: f64,
    pub max_backtracks: usize,
}

impl Default for GpmpParams {
    fn default() -> Self {
        GpmpParams {
            iterations: 100,
            step_size: 1.0,
            tolerance: 1e-6,
            max_backtracks: 30,
        }
    }
}

impl GpmpParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("GPMP needs at least one iteration".into()));
        }
        if !(self.step_size > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::Config("GPMP step size must be positive and tolerance >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GpmpResult {
    pub trajectory: Trajectory,
    /// Total cost before the first iteration and after each accepted one.
    pub cost_trace: Vec<f64>,
}

/// Factorized precision of the GP prior over the interior waypoints of a
/// horizon-`H` trajectory, scaled by the suite's GP temperature.
pub struct GpPreconditioner {
    horizon: usize,
    chol: Cholesky<f64, Dyn>,
}

impl GpPreconditioner {
    pub fn new(suite: &CostSuite, horizon: usize) -> Result<Self> {
        let lambda = suite
            .term(CostKind::GpSmoothness)
            .map(|t| t.lambda)
            .ok_or_else(|| Error::Config("GPMP needs a gp_smoothness cost term".into()))?;
        if horizon < 3 {
            return Err(Error::InvalidArgument(format!("GPMP needs a horizon of at least 3, got {horizon}")));
        }
        let full = gp_precision(&suite.gp, horizon);
        let d = 2 * suite.gp.dof();
        let n = (horizon - 2) * d;
        let interior = full.view((d, d), (n, n)) * lambda.max(1e-6);
        let chol = interior
            .cholesky()
            .ok_or_else(|| Error::Singular("GP precision over interior states".into()))?;
        Ok(GpPreconditioner { horizon, chol })
    }

    /// `P⁻¹ g` over the interior rows, returned as an `(H−2) × d` matrix.
    fn solve(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let (h, d) = (g.nrows(), g.ncols());
        let flat = DVector::from_iterator((h - 2) * d, (1..h - 1).flat_map(|t| (0..d).map(move |j| g[(t, j)])));
        let x = self.chol.solve(&flat);
        DMatrix::from_fn(h - 2, d, |t, j| x[t * d + j])
    }
}

/// Hessian of `½ Σ_t ‖Φ s_t − s_{t+1}‖²_{Q⁻¹}` over the stacked states
/// `[s_0; …; s_{H−1}]`.
pub fn gp_precision(gp: &GpParams, horizon: usize) -> DMatrix<f64> {
    let d = gp.phi.nrows();
    let pt_qi = gp.phi.transpose() * &gp.q_inv;
    let a = &pt_qi * &gp.phi;
    let b = -pt_qi;
    let mut k = DMatrix::zeros(horizon * d, horizon * d);
    for t in 0..horizon - 1 {
        let (i, j) = (t * d, (t + 1) * d);
        let mut kk = k.view_mut((i, i), (d, d));
        kk += &a;
        let mut kk = k.view_mut((j, j), (d, d));
        kk += &gp.q_inv;
        let mut kk = k.view_mut((i, j), (d, d));
        kk += &b;
        let mut kk = k.view_mut((j, i), (d, d));
        kk += b.transpose();
    }
    k
}

/// Preconditioned gradient descent on the suite's total cost with the
/// first and last rows held fixed. Each iteration solves `P δ = ∇C` with
/// the GP precision `P` and backtracks along `−δ` until the Armijo
/// condition holds, so the cost trace never increases.
pub fn gpmp_optimize(init: &Trajectory, suite: &CostSuite, params: &GpmpParams) -> Result<GpmpResult> {
    params.validate()?;
    let pre = GpPreconditioner::new(suite, init.horizon())?;
    gpmp_with(init, suite, params, &pre)
}

/// [`gpmp_optimize`] with a precomputed preconditioner.
pub fn gpmp_with(init: &Trajectory, suite: &CostSuite, params: &GpmpParams, pre: &GpPreconditioner) -> Result<GpmpResult> {
    params.validate()?;
    if init.state_dim() != 2 * suite.robot.dof() {
        return Err(Error::DimensionMismatch {
            expected: 2 * suite.robot.dof(),
            got: init.state_dim(),
        });
    }
    if init.horizon() != pre.horizon {
        return Err(Error::InvalidArgument(format!(
            "preconditioner built for horizon {}, trajectory has {}",
            pre.horizon,
            init.horizon()
        )));
    }
    let h = init.horizon();
    let mut x = init.states.clone();
    let mut cost = total_cost(suite, &x)?;
    if !cost.is_finite() {
        return Err(Error::NonFinite("GPMP initial cost".into()));
    }
    let mut trace = vec![cost];
    let mut eta = params.step_size;
    for _ in 0..params.iterations {
        let (_, grad) = total_cost_and_full_grad(suite, &x)?;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GPMP gradient".into()));
        }
        let delta = pre.solve(&grad);
        let slope: f64 = grad.rows(1, h - 2).component_mul(&delta).sum();
        if !(slope > 0.0) {
            break;
        }
        eta = (2.0 * eta).min(params.step_size);
        let mut accepted = None;
        for _ in 0..=params.max_backtracks {
            let mut trial = x.clone();
            {
                let mut inner = trial.rows_mut(1, h - 2);
                inner -= &delta * eta;
            }
            let c = total_cost(suite, &trial)?;
            if !c.is_finite() {
                return Err(Error::NonFinite("GPMP trial cost".into()));
            }
            if c <= cost - 1e-4 * eta * slope {
                accepted = Some((trial, c));
                break;
            }
            eta *= 0.5;
        }
        let Some((next, c)) = accepted else { break };
        let drop = cost - c;
        x = next;
        cost = c;
        trace.push(cost);
        if drop < params.tolerance * cost.abs().max(1.0) {
            break;
        }
    }
    Ok(GpmpResult {
        trajectory: Trajectory::new(x, init.dt)?,
        cost_trace: trace,
    })
}

/// Runs [`gpmp_optimize`] on every prior sample in parallel. Failures stay
/// per sample.
pub fn primed_gpmp(samples: &[Trajectory], suite: &CostSuite, params: &GpmpParams) -> Result<Vec<Result<GpmpResult>>> {
    params.validate()?;
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let pre = GpPreconditioner::new(suite, first.horizon())?;
    Ok(samples
        .par_iter()
        .map(|s| gpmp_with(s, suite, params, &pre))
        .collect())
}
