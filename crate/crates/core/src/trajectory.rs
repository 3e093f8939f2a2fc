//! Discrete-time trajectories and the constant-velocity Gaussian-process
//! prior used as a smoothness cost.

use nalgebra::DMatrix;
use crate::error::{Error, Result};

/// `H × 2·dof` state matrix; row `t` is `[q_t, q̇_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: DMatrix<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: DMatrix<f64>, dt: f64) -> Result<Self> {
        if states.nrows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs at least 2 waypoints, got {}",
                states.nrows()
            )));
        }
        if states.ncols() == 0 || !states.ncols().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "state width must be 2*dof, got {}",
                states.ncols()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory state".into()));
        }
        Ok(Trajectory { states, dt })
    }

    pub fn horizon(&self) -> usize {
        self.states.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn dof(&self) -> usize {
        self.states.ncols() / 2
    }

    pub fn position(&self, t: usize) -> Vec<f64> {
        (0..self.dof()).map(|j| self.states[(t, j)]).collect()
    }

    pub fn velocity(&self, t: usize) -> Vec<f64> {
        let dof = self.dof();
        (0..dof).map(|j| self.states[(t, dof + j)]).collect()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.horizon()).map(move |t| self.position(t))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.states
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], dt: f64) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("ragged trajectory rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]), dt)
    }
}

/// Holonomic constant-velocity GP prior between consecutive states.
#[derive(Clone, Debug, PartialEq)]
pub struct GpParams {
    pub dt: f64,
    pub qc: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
}

impl GpParams {
    pub fn new(dt: f64, qc: DMatrix<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let n = qc.nrows();
        if n == 0 || qc.ncols() != n {
            return Err(Error::InvalidArgument("Qc must be square and non-empty".into()));
        }
        if (&qc - qc.transpose()).abs().max() > 1e-12 || qc.clone().cholesky().is_none() {
            return Err(Error::Singular("Qc is not symmetric positive definite".into()));
        }
        let id = DMatrix::<f64>::identity(n, n);
        let mut phi = DMatrix::<f64>::identity(2 * n, 2 * n);
        phi.view_mut((0, n), (n, n)).copy_from(&(&id * dt));

        let mut q = DMatrix::<f64>::zeros(2 * n, 2 * n);
        q.view_mut((0, 0), (n, n))
            .copy_from(&(&qc * (dt.powi(3) / 3.0)));
        q.view_mut((0, n), (n, n))
            .copy_from(&(&qc * (dt * dt / 2.0)));
        q.view_mut((n, 0), (n, n))
            .copy_from(&(&qc * (dt * dt / 2.0)));
        q.view_mut((n, n), (n, n)).copy_from(&(&qc * dt));

        // Closed-form block inverse: only Qc is inverted numerically, which
        // keeps diagonal Qc exact.
        let qc_inv = qc
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("Qc is not positive definite".into()))?
            .inverse();
        let mut q_inv = DMatrix::<f64>::zeros(2 * n, 2 * n);
        q_inv.view_mut((0, 0), (n, n)).copy_from(&(&qc_inv * (12.0 / dt.powi(3))));
        q_inv.view_mut((0, n), (n, n)).copy_from(&(&qc_inv * (-6.0 / (dt * dt))));
        q_inv.view_mut((n, 0), (n, n)).copy_from(&(&qc_inv * (-6.0 / (dt * dt))));
        q_inv.view_mut((n, n), (n, n)).copy_from(&(&qc_inv * (4.0 / dt)));
        let residual = (&q * &q_inv - DMatrix::<f64>::identity(2 * n, 2 * n))
            .abs()
            .max();
        if residual >= 1e-8 {
            return Err(Error::Singular(format!(
                "Q inverse residual {residual:e} exceeds 1e-8"
            )));
        }
        Ok(GpParams {
            dt,
            qc,
            phi,
            q,
            q_inv,
        })
    }

    /// Isotropic `Qc = sigma2 · I`.
    pub fn isotropic(dt: f64, dof: usize, sigma2: f64) -> Result<Self> {
        Self::new(dt, DMatrix::identity(dof, dof) * sigma2)
    }

    pub fn dof(&self) -> usize {
        self.qc.nrows()
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        if traj.state_dim() != 2 * self.dof() {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.dof(),
                got: traj.state_dim(),
            });
        }
        Ok(())
    }

    /// Transition residuals `Φ s_t − s_{t+1}` for t = 0..H−2, one per row.
    fn residuals(&self, states: &DMatrix<f64>) -> DMatrix<f64> {
        let h = states.nrows();
        let head = states.rows(0, h - 1);
        let tail = states.rows(1, h - 1);
        head * self.phi.transpose() - tail
    }

    /// `½ Σ_t ‖Φ s_t − s_{t+1}‖²_{Q⁻¹}` over the H−1 transitions.
    pub fn cost(&self, traj: &Trajectory) -> Result<f64> {
        self.check(traj)?;
        Ok(self.cost_unchecked(&traj.states))
    }

    pub(crate) fn cost_unchecked(&self, states: &DMatrix<f64>) -> f64 {
        let r = self.residuals(states);
        let weighted = &r * &self.q_inv;
        0.5 * r.component_mul(&weighted).sum()
    }

    pub fn cost_grad(&self, traj: &Trajectory) -> Result<DMatrix<f64>> {
        self.check(traj)?;
        Ok(self.cost_grad_unchecked(&traj.states))
    }

    pub(crate) fn cost_grad_unchecked(&self, states: &DMatrix<f64>) -> DMatrix<f64> {
        let h = states.nrows();
        // Q⁻¹ is symmetric, so the row form r·Q⁻¹ is (Q⁻¹ r)ᵀ.
        let w = self.residuals(states) * &self.q_inv;
        let mut grad = DMatrix::zeros(h, states.ncols());
        {
            let mut head = grad.rows_mut(0, h - 1);
            head += &w * &self.phi;
        }
        {
            let mut tail = grad.rows_mut(1, h - 1);
            tail -= &w;
        }
        grad
    }
}

/// Constant-velocity interpolation between two configurations.
pub fn straight_line_init(start: &[f64], goal: &[f64], horizon: usize, dt: f64) -> Result<Trajectory> {
    if start.len() != goal.len() {
        return Err(Error::DimensionMismatch {
            expected: start.len(),
            got: goal.len(),
        });
    }
    if horizon < 2 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be at least 2, got {horizon}"
        )));
    }
    let dof = start.len();
    let span = (horizon - 1) as f64;
    let mut states = DMatrix::zeros(horizon, 2 * dof);
    for j in 0..dof {
        let v = (goal[j] - start[j]) / (span * dt);
        for t in 0..horizon {
            let a = t as f64 / span;
            states[(t, j)] = (1.0 - a) * start[j] + a * goal[j];
            states[(t, dof + j)] = v;
        }
        states[(0, j)] = start[j];
        states[(horizon - 1, j)] = goal[j];
    }
    Trajectory::new(states, dt)
}
