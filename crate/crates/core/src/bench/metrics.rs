use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Environment, RobotModel};
use crate::trajectory::Trajectory;

/// A waypoint collides when any collision sphere has `sdf ≤ radius`.
pub fn waypoint_in_collision(env: &Environment, robot: &RobotModel, q: &[f64]) -> bool {
    robot.in_collision(env, q, 0.0)
}

pub fn trajectory_free(env: &Environment, robot: &RobotModel, traj: &Trajectory) -> bool {
    traj.positions().all(|q| !waypoint_in_collision(env, robot, &q))
}

/// 1 when at least one trajectory of the batch is collision-free.
pub fn metric_success(batch: &[Trajectory], env: &Environment, robot: &RobotModel) -> Result<u8> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("success of an empty batch".into()));
    }
    Ok(batch.iter().any(|t| trajectory_free(env, robot, t)) as u8)
}

/// Colliding waypoints over all waypoints of the batch (pooled).
pub fn metric_intensity(batch: &[Trajectory], env: &Environment, robot: &RobotModel) -> Result<f64> {
    let total: usize = batch.iter().map(|t| t.horizon()).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("intensity of an empty batch".into()));
    }
    let bad: usize = batch
        .iter()
        .map(|t| t.positions().filter(|q| waypoint_in_collision(env, robot, q)).count())
        .sum();
    Ok(bad as f64 / total as f64)
}

/// `Σ_t ‖q_{t+1} − q_t‖₂` over configuration positions.
pub fn metric_path_length(traj: &Trajectory) -> f64 {
    let pos: Vec<Vec<f64>> = traj.positions().collect();
    pos.windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt())
        .sum()
}

/// Sum over time steps of the population variance of all pairwise
/// waypoint distances at that step.
pub fn metric_waypoint_variance(batch: &[Trajectory]) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "waypoint variance needs at least 2 trajectories, got {}",
            batch.len()
        )));
    }
    let h = batch[0].horizon();
    if batch.iter().any(|t| t.horizon() != h || t.dof() != batch[0].dof()) {
        return Err(Error::InvalidArgument("batch trajectories differ in shape".into()));
    }
    let dof = batch[0].dof();
    let mut total = 0.0;
    let mut dists = Vec::with_capacity(batch.len() * (batch.len() - 1) / 2);
    for t in 0..h {
        dists.clear();
        for i in 0..batch.len() {
            for j in i + 1..batch.len() {
                let d: f64 = (0..dof)
                    .map(|k| {
                        let e = batch[i].states[(t, k)] - batch[j].states[(t, k)];
                        e * e
                    })
                    .sum();
                dists.push(d.sqrt());
            }
        }
        let n = dists.len() as f64;
        let mean = dists.iter().sum::<f64>() / n;
        total += dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    }
    Ok(total)
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Stat {
                mean: 0.0,
                std: 0.0,
                count: 0,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
            count: v.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Bounds, SdfPrimitive};
    use crate::trajectory::straight_line_init;
    use nalgebra::DMatrix;

    fn env() -> Environment {
        Environment::new(Bounds::default(), vec![SdfPrimitive::sphere([0.0, 0.0], 0.2)], vec![]).unwrap()
    }

    fn robot() -> RobotModel {
        RobotModel::point_mass(Bounds::default(), 0.05, 2.0)
    }

    fn from_positions(p: &[[f64; 2]]) -> Trajectory {
        let mut s = DMatrix::zeros(p.len(), 4);
        for (i, q) in p.iter().enumerate() {
            s[(i, 0)] = q[0];
            s[(i, 1)] = q[1];
        }
        Trajectory::new(s, 0.1).unwrap()
    }

    #[test]
    fn success_examples() {
        let through = straight_line_init(&[-0.8, 0.0], &[0.8, 0.0], 20, 0.1).unwrap();
        let above = straight_line_init(&[-0.8, 0.6], &[0.8, 0.6], 20, 0.1).unwrap();
        let mut batch = vec![through.clone(); 99];
        assert_eq!(metric_success(&batch, &env(), &robot()).unwrap(), 0);
        batch.push(above);
        assert_eq!(metric_success(&batch, &env(), &robot()).unwrap(), 1);
        assert!(metric_success(&[], &env(), &robot()).is_err());
    }

    #[test]
    fn intensity_examples() {
        let free = straight_line_init(&[-0.8, 0.6], &[0.8, 0.6], 10, 0.1).unwrap();
        assert_eq!(metric_intensity(std::slice::from_ref(&free), &env(), &robot()).unwrap(), 0.0);
        let mut one_bad = free;
        one_bad.states[(4, 0)] = 0.0;
        one_bad.states[(4, 1)] = 0.0;
        assert_eq!(metric_intensity(&[one_bad], &env(), &robot()).unwrap(), 0.1);
    }

    #[test]
    fn path_length_examples() {
        let c = from_positions(&[[0.3, 0.3]; 5]);
        assert_eq!(metric_path_length(&c), 0.0);
        for h in [2, 7, 50] {
            let l = straight_line_init(&[0.0, 0.0], &[3.0, 4.0], h, 0.1).unwrap();
            assert!((metric_path_length(&l) - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_examples() {
        let a = from_positions(&[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(metric_waypoint_variance(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
        let b = from_positions(&[[0.0, 1.0], [1.0, 2.0]]);
        assert_eq!(metric_waypoint_variance(&[a.clone(), b.clone()]).unwrap(), 0.0);
        // t=0: points (0,0), (0,1), (0,3) → distances 1, 3, 2 → variance 2/3
        // t=1: points (1,0), (1,2), (1,0) → distances 2, 0, 2 → variance 8/9
        let c = from_positions(&[[0.0, 3.0], [1.0, 0.0]]);
        let v = metric_waypoint_variance(&[a.clone(), b, c]).unwrap();
        assert!((v - (2.0 / 3.0 + 8.0 / 9.0)).abs() < 1e-15);
        assert!(metric_waypoint_variance(&[a]).is_err());
    }

    #[test]
    fn stat_of_values() {
        let s = Stat::of([1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.count), (2.0, 1.0, 2));
        assert_eq!(Stat::of(std::iter::empty()).count, 0);
    }
}
