use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Environment, RobotModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtParams {
    /// Maximum edge length in configuration space.
    pub step_size: f64,
    /// Probability of steering toward the other tree's root.
    pub goal_bias: f64,
    pub max_iterations: usize,
    /// Spacing of collision checks along an edge.
    pub check_resolution: f64,
    /// Extra clearance demanded of every collision sphere.
    pub margin: f64,
}

impl Default for RrtParams {
    fn default() -> Self {
        RrtParams {
            step_size: 0.1,
            goal_bias: 0.05,
            max_iterations: 5_000,
            check_resolution: 0.01,
            margin: 0.0,
        }
    }
}

impl RrtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.check_resolution > 0.0) {
            return Err(Error::Config("step size and check resolution must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(Error::Config(format!("goal bias must lie in [0, 1], got {}", self.goal_bias)));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("margin must be >= 0".into()));
        }
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lerp(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
}

fn config_valid(env: &Environment, robot: &RobotModel, q: &[f64], margin: f64) -> bool {
    robot.within_joint_limits(q) && !robot.in_collision(env, q, margin)
}

/// True when every point of the segment `a → b`, sampled no further than
/// `resolution` apart (both ends included), is valid.
pub fn edge_valid(env: &Environment, robot: &RobotModel, a: &[f64], b: &[f64], resolution: f64, margin: f64) -> bool {
    let n = (dist(a, b) / resolution).ceil().max(1.0) as usize;
    (0..=n).all(|i| config_valid(env, robot, &lerp(a, b, i as f64 / n as f64), margin))
}

struct Tree {
    nodes: Vec<Vec<f64>>,
    parent: Vec<usize>,
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

impl Tree {
    fn new(root: Vec<f64>) -> Self {
        Tree {
            nodes: vec![root],
            parent: vec![usize::MAX],
        }
    }

    fn nearest(&self, q: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = dist(n, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn extend(&mut self, q: &[f64], env: &Environment, robot: &RobotModel, p: &RrtParams) -> Extend {
        let near = self.nearest(q);
        let from = &self.nodes[near];
        let d = dist(from, q);
        let (target, reached) = if d <= p.step_size {
            (q.to_vec(), true)
        } else {
            (lerp(from, q, p.step_size / d), false)
        };
        if !edge_valid(env, robot, from, &target, p.check_resolution, p.margin) {
            return Extend::Trapped;
        }
        self.nodes.push(target);
        self.parent.push(near);
        let id = self.nodes.len() - 1;
        if reached {
            Extend::Reached(id)
        } else {
            Extend::Advanced(id)
        }
    }

    fn connect(&mut self, q: &[f64], env: &Environment, robot: &RobotModel, p: &RrtParams) -> Option<usize> {
        loop {
            match self.extend(q, env, robot, p) {
                Extend::Trapped => return None,
                Extend::Reached(id) => return Some(id),
                Extend::Advanced(_) => {}
            }
        }
    }

    /// Nodes from `id` back to the root.
    fn branch(&self, mut id: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        while id != usize::MAX {
            out.push(self.nodes[id].clone());
            id = self.parent[id];
        }
        out
    }
}

/// Bidirectional RRT-Connect. Returns the waypoints of a piecewise-linear
/// path from `start` to `goal` whose every edge was checked at
/// `check_resolution`, or [`Error::PlannerFailure`] when the iteration budget
/// runs out. A direct start-goal edge is tried first.
pub fn rrt_connect<R: Rng + ?Sized>(
    env: &Environment,
    robot: &RobotModel,
    start: &[f64],
    goal: &[f64],
    params: &RrtParams,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    let dof = robot.dof();
    for q in [start, goal] {
        if q.len() != dof {
            return Err(Error::DimensionMismatch {
                expected: dof,
                got: q.len(),
            });
        }
        if !config_valid(env, robot, q, params.margin) {
            return Err(Error::InvalidArgument(format!("endpoint {q:?} is in collision")));
        }
    }
    if edge_valid(env, robot, start, goal, params.check_resolution, params.margin) {
        return Ok(vec![start.to_vec(), goal.to_vec()]);
    }
    let mut a = Tree::new(start.to_vec());
    let mut b = Tree::new(goal.to_vec());
    // true while `a` is the start tree
    let mut a_is_start = true;
    for _ in 0..params.max_iterations {
        let q_rand: Vec<f64> = if rng.random_bool(params.goal_bias) {
            b.nodes[0].clone()
        } else {
            robot
                .joint_limits
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect()
        };
        let new_id = match a.extend(&q_rand, env, robot, params) {
            Extend::Trapped => None,
            Extend::Advanced(id) | Extend::Reached(id) => Some(id),
        };
        if let Some(id) = new_id {
            let q_new = a.nodes[id].clone();
            if let Some(bid) = b.connect(&q_new, env, robot, params) {
                let mut from_a = a.branch(id);
                from_a.reverse();
                let to_b = b.branch(bid);
                // q_new appears at the end of from_a and the start of to_b
                let mut path = from_a;
                path.extend(to_b.into_iter().skip(1));
                if !a_is_start {
                    path.reverse();
                }
                return Ok(path);
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(Error::PlannerFailure(format!(
        "RRT-Connect found no path within {} iterations",
        params.max_iterations
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Bounds, SdfPrimitive};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point() -> RobotModel {
        RobotModel::point_mass(Bounds::default(), 0.02, 2.0)
    }

    fn gap_wall() -> Environment {
        Environment::new(
            Bounds::default(),
            vec![
                SdfPrimitive::aabb([0.0, 0.6], [0.05, 0.45]),
                SdfPrimitive::aabb([0.0, -0.6], [0.05, 0.45]),
            ],
            vec![],
        )
        .unwrap()
    }

    fn dense_ok(env: &Environment, robot: &RobotModel, path: &[Vec<f64>], res: f64) -> bool {
        path.windows(2).all(|w| edge_valid(env, robot, &w[0], &w[1], res, 0.0))
    }

    #[test]
    fn empty_environment_is_one_edge() {
        let env = Environment::empty(Bounds::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let path = rrt_connect(&env, &point(), &[-0.8, -0.8], &[0.8, 0.7], &RrtParams::default(), &mut rng).unwrap();
        assert_eq!(path, vec![vec![-0.8, -0.8], vec![0.8, 0.7]]);
    }

    #[test]
    fn passes_through_gap() {
        let env = gap_wall();
        let robot = point();
        let p = RrtParams::default();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let path = rrt_connect(&env, &robot, &[-0.7, 0.5], &[0.7, -0.5], &p, &mut rng).unwrap();
            assert_eq!(path[0], vec![-0.7, 0.5]);
            assert_eq!(path.last().unwrap(), &vec![0.7, -0.5]);
            assert!(dense_ok(&env, &robot, &path, p.check_resolution / 10.0));
            let crossing = path.windows(2).find(|w| w[0][0] < 0.0 && w[1][0] >= 0.0).unwrap();
            let y = crossing[0][1] + (crossing[1][1] - crossing[0][1]) * (-crossing[0][0]) / (crossing[1][0] - crossing[0][0]);
            assert!(y.abs() < 0.15, "crossed the wall at y = {y}");
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let env = gap_wall();
        let run = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            rrt_connect(&env, &point(), &[-0.7, 0.5], &[0.7, -0.5], &RrtParams::default(), &mut rng).unwrap()
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn enclosed_start_fails() {
        let env = Environment::new(
            Bounds::default(),
            vec![
                SdfPrimitive::aabb([0.0, 0.3], [0.35, 0.05]),
                SdfPrimitive::aabb([0.0, -0.3], [0.35, 0.05]),
                SdfPrimitive::aabb([0.3, 0.0], [0.05, 0.35]),
                SdfPrimitive::aabb([-0.3, 0.0], [0.05, 0.35]),
            ],
            vec![],
        )
        .unwrap();
        let p = RrtParams {
            max_iterations: 300,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = rrt_connect(&env, &point(), &[0.0, 0.0], &[0.8, 0.8], &p, &mut rng).unwrap_err();
        assert!(matches!(err, Error::PlannerFailure(_)));
    }

    #[test]
    fn colliding_endpoint_rejected() {
        let env = gap_wall();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(rrt_connect(&env, &point(), &[0.0, 0.6], &[0.7, 0.0], &RrtParams::default(), &mut rng).is_err());
        let bad = RrtParams {
            goal_bias: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            rrt_connect(&env, &point(), &[-0.7, 0.0], &[0.7, 0.0], &bad, &mut rng),
            Err(Error::Config(_))
        ));
    }
}
