//! Differentiable task costs and their weighted aggregation into the
//! guidance direction `g = −Σ λ_i ∇c_i(τ)`.
//!
//! Waypoint costs (collision, self-collision, joint limits, end-effector
//! orientation) are summed over every waypoint of a trajectory; the GP term
//! acts on the whole trajectory. Start and goal are never costed: the first
//! and last gradient rows are zeroed because those states are hard-set.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_z, Environment, Pose3, RobotKind, RobotModel};
use crate::lie::hat;
pub use crate::lie::{se3_distance, so3_log_map};
use crate::trajectory::{GpParams, Trajectory};

pub const DEFAULT_OBSTACLE_MARGIN: f64 = 0.03;
pub const DEFAULT_LIMITS_MARGIN: f64 = 0.01;
pub const DEFAULT_SELF_COLLISION_MARGIN: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Collision,
    SelfCollision,
    JointLimits,
    EePose,
    GpSmoothness,
}

impl CostKind {
    pub fn default_margin(self) -> f64 {
        match self {
            CostKind::Collision => DEFAULT_OBSTACLE_MARGIN,
            CostKind::SelfCollision => DEFAULT_SELF_COLLISION_MARGIN,
            CostKind::JointLimits => DEFAULT_LIMITS_MARGIN,
            CostKind::EePose | CostKind::GpSmoothness => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTerm {
    pub kind: CostKind,
    /// Temperature λ.
    pub lambda: f64,
    /// Margin ε; `None` picks the kind's default.
    #[serde(default)]
    pub margin: Option<f64>,
    /// Desired end-effector heading about z (planar arms), radians.
    #[serde(default)]
    pub goal_heading: Option<f64>,
}

impl CostTerm {
    pub fn new(kind: CostKind, lambda: f64) -> Self {
        CostTerm {
            kind,
            lambda,
            margin: None,
            goal_heading: None,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = Some(margin);
        self
    }

    pub fn with_goal_heading(mut self, heading: f64) -> Self {
        self.goal_heading = Some(heading);
        self
    }

    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or_else(|| self.kind.default_margin())
    }
}

/// Weighted cost terms bound to an environment, robot and GP prior.
#[derive(Clone, Debug)]
pub struct CostSuite {
    pub terms: Vec<CostTerm>,
    pub env: Environment,
    pub robot: RobotModel,
    pub gp: GpParams,
}

impl CostSuite {
    pub fn new(terms: Vec<CostTerm>, env: Environment, robot: RobotModel, gp: GpParams) -> Result<Self> {
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].iter().any(|o| o.kind == t.kind) {
                return Err(Error::Config(format!("duplicate cost term {:?}", t.kind)));
            }
            // zero disables a term
            if !(t.lambda >= 0.0) || !t.lambda.is_finite() {
                return Err(Error::Config(format!("temperature must be >= 0, got {}", t.lambda)));
            }
            if !(t.margin() >= 0.0) {
                return Err(Error::Config(format!("margin must be >= 0, got {}", t.margin())));
            }
            if t.kind == CostKind::EePose {
                if robot.kind == RobotKind::PointMass2d {
                    return Err(Error::Unsupported(
                        "end-effector cost needs an arm robot".into(),
                    ));
                }
                if t.goal_heading.is_none() {
                    return Err(Error::Config("ee_pose term needs goal_heading".into()));
                }
            }
        }
        if gp.dof() != robot.dof() {
            return Err(Error::DimensionMismatch {
                expected: robot.dof(),
                got: gp.dof(),
            });
        }
        Ok(CostSuite {
            terms,
            env,
            robot,
            gp,
        })
    }

    pub fn term(&self, kind: CostKind) -> Option<&CostTerm> {
        self.terms.iter().find(|t| t.kind == kind)
    }

    /// Same suite with every temperature multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> CostSuite {
        let mut s = self.clone();
        for t in &mut s.terms {
            t.lambda *= factor;
        }
        s
    }
}

/// Mean obstacle hinge over the robot's collision spheres. The hinge acts
/// on `sdf(center) − radius`, active below `margin`.
pub fn collision_cost(
    env: &Environment,
    robot: &RobotModel,
    q: &[f64],
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    let fk = robot.forward_kinematics(q)?;
    let k = robot.collision_spheres.len() as f64;
    let mut cost = 0.0;
    let mut grad = vec![0.0; q.len()];
    let mut jac = None;
    for (i, (c, s)) in fk.sphere_centers.iter().zip(&robot.collision_spheres).enumerate() {
        let (sdf, n) = env.sdf_with_grad(c);
        let d = sdf - s.radius;
        if d <= margin {
            cost += (margin - d) / k;
            let j = match &jac {
                Some(j) => j,
                None => jac.insert(robot.fk_jacobian(q)?),
            };
            let js = &j.spheres[i];
            for (col, g) in grad.iter_mut().enumerate() {
                *g -= (n.x * js[(0, col)] + n.y * js[(1, col)]) / k;
            }
        }
    }
    Ok((cost, grad))
}

/// Mean clearance hinge over sphere pairs on non-adjacent links.
pub fn self_collision_cost(robot: &RobotModel, q: &[f64], margin: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; q.len()];
    if robot.num_links() < 3 {
        robot.forward_kinematics(q)?;
        return Ok((0.0, grad));
    }
    let fk = robot.forward_kinematics(q)?;
    let spheres = &robot.collision_spheres;
    let mut pairs = Vec::new();
    for i in 0..spheres.len() {
        for j in i + 1..spheres.len() {
            if spheres[i].link.abs_diff(spheres[j].link) >= 2 {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        return Ok((0.0, grad));
    }
    let n = pairs.len() as f64;
    let mut cost = 0.0;
    let mut jac = None;
    for (i, j) in pairs {
        let diff = fk.sphere_centers[i] - fk.sphere_centers[j];
        let dist = diff.norm();
        let clearance = dist - spheres[i].radius - spheres[j].radius;
        if clearance < margin {
            cost += (margin - clearance) / n;
            if dist > 0.0 {
                let u = diff / dist;
                let jm = match &jac {
                    Some(j) => j,
                    None => jac.insert(robot.fk_jacobian(q)?),
                };
                let (ji, jj) = (&jm.spheres[i], &jm.spheres[j]);
                for (col, g) in grad.iter_mut().enumerate() {
                    let dx = ji[(0, col)] - jj[(0, col)];
                    let dy = ji[(1, col)] - jj[(1, col)];
                    *g -= (u.x * dx + u.y * dy) / n;
                }
            }
        }
    }
    Ok((cost, grad))
}

fn limit_hinge(v: f64, (lo, hi): (f64, f64), margin: f64) -> (f64, f64) {
    if v < lo + margin {
        let e = lo + margin - v;
        (e * e, -2.0 * e)
    } else if v > hi - margin {
        let e = hi - margin - v;
        (e * e, -2.0 * e)
    } else {
        (0.0, 0.0)
    }
}

/// Squared hinge on joint-position and joint-velocity limits, summed.
/// Returns the cost and the gradients w.r.t. `q` and `qd`.
pub fn joint_limits_cost(
    robot: &RobotModel,
    q: &[f64],
    qd: &[f64],
    margin: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let dof = robot.dof();
    for v in [q, qd] {
        if v.len() != dof {
            return Err(Error::DimensionMismatch {
                expected: dof,
                got: v.len(),
            });
        }
    }
    let mut cost = 0.0;
    let mut gq = vec![0.0; dof];
    let mut gv = vec![0.0; dof];
    for i in 0..dof {
        let (c, g) = limit_hinge(q[i], robot.joint_limits[i], margin);
        cost += c;
        gq[i] = g;
        let (c, g) = limit_hinge(qd[i], robot.velocity_limits[i], margin);
        cost += c;
        gv[i] = g;
    }
    Ok((cost, gq, gv))
}

/// Orientation-only SE(3) distance of the end effector to `goal` at one
/// configuration, with its gradient.
pub fn ee_orientation_cost(robot: &RobotModel, q: &[f64], goal: &Matrix3<f64>) -> Result<(f64, Vec<f64>)> {
    if robot.kind == RobotKind::PointMass2d {
        return Err(Error::Unsupported("end-effector cost needs an arm robot".into()));
    }
    let fk = robot.forward_kinematics(q)?;
    // Goal position copied from the current pose: the translation term is zero.
    let target = Pose3 {
        rotation: *goal,
        position: fk.ee_pose.position,
    };
    let cost = se3_distance(&fk.ee_pose, &target)?;
    let r = fk.ee_pose.rotation;
    let rel = r.transpose() * goal;
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = (1.0 - cos * cos).sqrt();
    let mut grad = vec![0.0; q.len()];
    if sin > 1e-12 {
        // dR/dq_k = [ω_k]× R; planar joints all rotate about z.
        let omega = Vector3::z();
        let dr = hat(&omega) * r;
        let dtrace = (dr.transpose() * goal).trace();
        let dtheta = -dtrace / (2.0 * sin);
        let jac = robot.fk_jacobian(q)?;
        for (g, w) in grad.iter_mut().zip(jac.ee_heading.iter()) {
            *g = dtheta * w;
        }
    }
    Ok((cost, grad))
}

/// Sum of the end-effector orientation cost over every waypoint.
pub fn ee_trajectory_cost(robot: &RobotModel, traj: &Trajectory, goal_heading: f64) -> Result<(f64, DMatrix<f64>)> {
    let goal = rot_z(goal_heading);
    let dof = robot.dof();
    let mut grad = DMatrix::zeros(traj.horizon(), traj.state_dim());
    let mut total = 0.0;
    for t in 0..traj.horizon() {
        let (c, g) = ee_orientation_cost(robot, &traj.position(t), &goal)?;
        total += c;
        for j in 0..dof {
            grad[(t, j)] = g[j];
        }
    }
    Ok((total, grad))
}

fn check_traj(suite: &CostSuite, states: &DMatrix<f64>) -> Result<()> {
    let d = 2 * suite.robot.dof();
    if states.ncols() != d || states.nrows() < 2 {
        return Err(Error::ShapeMismatch {
            expected: (states.nrows().max(2), d),
            got: (states.nrows(), states.ncols()),
        });
    }
    Ok(())
}

fn accumulate(suite: &CostSuite, states: &DMatrix<f64>, mut grad: Option<&mut DMatrix<f64>>) -> Result<f64> {
    check_traj(suite, states)?;
    let dof = suite.robot.dof();
    let h = states.nrows();
    let mut total = 0.0;
    let mut q = vec![0.0; dof];
    let mut qd = vec![0.0; dof];
    for term in &suite.terms {
        if term.lambda == 0.0 {
            continue;
        }
        let lam = term.lambda;
        let eps = term.margin();
        if term.kind == CostKind::GpSmoothness {
            total += lam * suite.gp.cost_unchecked(states);
            if let Some(g) = grad.as_deref_mut() {
                *g += suite.gp.cost_grad_unchecked(states) * lam;
            }
            continue;
        }
        let goal = term.goal_heading.map(rot_z);
        for t in 0..h {
            for j in 0..dof {
                q[j] = states[(t, j)];
                qd[j] = states[(t, dof + j)];
            }
            let (c, gq, gv) = match term.kind {
                CostKind::Collision => {
                    let (c, g) = collision_cost(&suite.env, &suite.robot, &q, eps)?;
                    (c, g, None)
                }
                CostKind::SelfCollision => {
                    let (c, g) = self_collision_cost(&suite.robot, &q, eps)?;
                    (c, g, None)
                }
                CostKind::JointLimits => {
                    let (c, g, v) = joint_limits_cost(&suite.robot, &q, &qd, eps)?;
                    (c, g, Some(v))
                }
                CostKind::EePose => {
                    let (c, g) = ee_orientation_cost(&suite.robot, &q, goal.as_ref().unwrap())?;
                    (c, g, None)
                }
                CostKind::GpSmoothness => unreachable!(),
            };
            total += lam * c;
            if let Some(g) = grad.as_deref_mut() {
                for j in 0..dof {
                    g[(t, j)] += lam * gq[j];
                }
                if let Some(v) = gv {
                    for j in 0..dof {
                        g[(t, dof + j)] += lam * v[j];
                    }
                }
            }
        }
    }
    Ok(total)
}

/// `Σ λ_i c_i(τ)`.
pub fn total_cost(suite: &CostSuite, states: &DMatrix<f64>) -> Result<f64> {
    accumulate(suite, states, None)
}

/// `(Σ λ_i c_i(τ), ∇ Σ λ_i c_i(τ))` with all rows kept.
pub fn total_cost_and_full_grad(suite: &CostSuite, states: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let mut grad = DMatrix::zeros(states.nrows(), states.ncols());
    let c = accumulate(suite, states, Some(&mut grad))?;
    Ok((c, grad))
}

/// Total weighted cost and the guidance direction `g = −Σ λ_i ∇c_i`, with
/// the start and goal rows of `g` zeroed.
pub fn total_cost_and_grad(suite: &CostSuite, states: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let (c, mut grad) = total_cost_and_full_grad(suite, states)?;
    grad.neg_mut();
    let h = grad.nrows();
    grad.row_mut(0).fill(0.0);
    grad.row_mut(h - 1).fill(0.0);
    Ok((c, grad))
}
