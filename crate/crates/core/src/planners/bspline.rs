use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// C² cubic interpolant of a waypoint sequence over a chord-length
/// parameter `u ∈ [0, 1]`, with zero first derivative at both ends. This is
/// the cubic B-spline interpolant with clamped end tangents written in
/// piecewise-polynomial form.
#[derive(Clone, Debug)]
pub struct ClampedCubicSpline {
    knots: Vec<f64>,
    points: Vec<Vec<f64>>,
    /// Second derivative at each knot, per dimension.
    m: Vec<Vec<f64>>,
}

impl ClampedCubicSpline {
    /// Fits the spline. Consecutive duplicate waypoints are merged; a path
    /// that collapses to a single point yields a constant spline.
    pub fn fit(path: &[Vec<f64>]) -> Result<Self> {
        if path.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "path needs at least 2 waypoints, got {}",
                path.len()
            )));
        }
        let dim = path[0].len();
        if dim == 0 || path.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidArgument("waypoints have inconsistent dimensions".into()));
        }
        if path.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path waypoint".into()));
        }
        let mut points: Vec<Vec<f64>> = vec![path[0].clone()];
        let mut chord = vec![0.0];
        for p in &path[1..] {
            let d = dist(points.last().unwrap(), p);
            if d > 0.0 {
                chord.push(chord.last().unwrap() + d);
                points.push(p.clone());
            }
        }
        let total = *chord.last().unwrap();
        if points.len() == 1 {
            return Ok(ClampedCubicSpline {
                knots: vec![0.0, 1.0],
                points: vec![points[0].clone(), points[0].clone()],
                m: vec![vec![0.0; dim]; 2],
            });
        }
        let mut knots: Vec<f64> = chord.iter().map(|c| c / total).collect();
        *knots.last_mut().unwrap() = 1.0;
        let n = points.len();
        let m: Vec<Vec<f64>> = {
            let per_dim: Vec<Vec<f64>> = (0..dim)
                .map(|j| {
                    let y: Vec<f64> = points.iter().map(|p| p[j]).collect();
                    second_derivatives(&knots, &y)
                })
                .collect();
            (0..n).map(|i| per_dim.iter().map(|c| c[i]).collect()).collect()
        };
        Ok(ClampedCubicSpline { knots, points, m })
    }

    fn segment(&self, u: f64) -> usize {
        let n = self.knots.len();
        match self.knots.partition_point(|&k| k <= u) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Position at parameter `u` (clamped to `[0, 1]`).
    pub fn eval(&self, u: f64) -> Vec<f64> {
        let u = u.clamp(0.0, 1.0);
        let i = self.segment(u);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - u) / h;
        let b = (u - self.knots[i]) / h;
        (0..self.points[0].len())
            .map(|j| {
                a * self.points[i][j]
                    + b * self.points[i + 1][j]
                    + ((a * a * a - a) * self.m[i][j] + (b * b * b - b) * self.m[i + 1][j]) * h * h / 6.0
            })
            .collect()
    }

    /// First derivative with respect to `u`.
    pub fn derivative(&self, u: f64) -> Vec<f64> {
        let u = u.clamp(0.0, 1.0);
        let i = self.segment(u);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - u) / h;
        let b = (u - self.knots[i]) / h;
        (0..self.points[0].len())
            .map(|j| {
                (self.points[i + 1][j] - self.points[i][j]) / h
                    - (3.0 * a * a - 1.0) * h / 6.0 * self.m[i][j]
                    + (3.0 * b * b - 1.0) * h / 6.0 * self.m[i + 1][j]
            })
            .collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Knot second derivatives of the complete cubic spline with zero end
/// slopes (tridiagonal solve).
fn second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let h0 = x[1] - x[0];
    diag[0] = h0 / 3.0;
    upper[0] = h0 / 6.0;
    rhs[0] = (y[1] - y[0]) / h0;
    for i in 1..n - 1 {
        let hl = x[i] - x[i - 1];
        let hr = x[i + 1] - x[i];
        lower[i] = hl / 6.0;
        diag[i] = (hl + hr) / 3.0;
        upper[i] = hr / 6.0;
        rhs[i] = (y[i + 1] - y[i]) / hr - (y[i] - y[i - 1]) / hl;
    }
    let hn = x[n - 1] - x[n - 2];
    lower[n - 1] = hn / 6.0;
    diag[n - 1] = hn / 3.0;
    rhs[n - 1] = -(y[n - 1] - y[n - 2]) / hn;
    // Thomas algorithm; the system is diagonally dominant.
    for i in 1..n {
        let w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut m = vec![0.0; n];
    m[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
    }
    m
}

/// Fits a [`ClampedCubicSpline`] through `path` and samples it at `horizon`
/// evenly spaced parameters. Velocities are the analytic spline derivative
/// under `u = t / ((H−1)·dt)`; both end velocities are zero and the end
/// positions equal the path ends exactly.
pub fn bspline_smooth(path: &[Vec<f64>], horizon: usize, dt: f64) -> Result<Trajectory> {
    if horizon < 2 {
        return Err(Error::InvalidArgument(format!("horizon must be at least 2, got {horizon}")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let spline = ClampedCubicSpline::fit(path)?;
    let dof = path[0].len();
    let span = (horizon - 1) as f64;
    let du_dt = 1.0 / (span * dt);
    let mut states = DMatrix::zeros(horizon, 2 * dof);
    for k in 0..horizon {
        let u = k as f64 / span;
        let q = spline.eval(u);
        let v = spline.derivative(u);
        for j in 0..dof {
            states[(k, j)] = q[j];
            states[(k, dof + j)] = v[j] * du_dt;
        }
    }
    for j in 0..dof {
        states[(0, j)] = path[0][j];
        states[(horizon - 1, j)] = path[path.len() - 1][j];
        states[(0, dof + j)] = 0.0;
        states[(horizon - 1, dof + j)] = 0.0;
    }
    Trajectory::new(states, dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zigzag() -> Vec<Vec<f64>> {
        vec![
            vec![-0.8, -0.6],
            vec![-0.3, 0.4],
            vec![0.1, 0.35],
            vec![0.5, -0.2],
            vec![0.8, 0.7],
        ]
    }

    #[test]
    fn interpolates_waypoints_with_zero_end_slope() {
        let path = zigzag();
        let s = ClampedCubicSpline::fit(&path).unwrap();
        for (k, p) in s.knots.iter().zip(&path) {
            let q = s.eval(*k);
            assert!(dist(&q, p) < 1e-12);
        }
        for u in [0.0, 1.0] {
            assert!(s.derivative(u).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn two_point_path_stays_on_line() {
        let t = bspline_smooth(&[vec![0.0, 0.0], vec![3.0, 4.0]], 20, 0.1).unwrap();
        for k in 0..20 {
            let p = t.position(k);
            // collinear with (3, 4) and monotone along it
            assert!((4.0 * p[0] - 3.0 * p[1]).abs() < 1e-12);
            if k > 0 {
                assert!(p[0] >= t.position(k - 1)[0]);
            }
        }
        assert_eq!(t.position(0), vec![0.0, 0.0]);
        assert_eq!(t.position(19), vec![3.0, 4.0]);
    }

    #[test]
    fn samples_lie_on_spline() {
        let path = zigzag();
        let (h, dt) = (64, 0.05);
        let traj = bspline_smooth(&path, h, dt).unwrap();
        let s = ClampedCubicSpline::fit(&path).unwrap();
        for k in 0..h {
            let q = s.eval(k as f64 / (h - 1) as f64);
            assert!(dist(&q, &traj.position(k)) < 1e-10);
        }
        assert_eq!(traj.position(0), path[0]);
        assert_eq!(traj.position(h - 1), path[4]);
        assert_eq!(traj.velocity(0), vec![0.0, 0.0]);
        assert_eq!(traj.velocity(h - 1), vec![0.0, 0.0]);
    }

    #[test]
    fn velocities_match_dense_differences() {
        let path = zigzag();
        let (h, dt) = (32, 0.1);
        let traj = bspline_smooth(&path, h, dt).unwrap();
        let s = ClampedCubicSpline::fit(&path).unwrap();
        let span = (h - 1) as f64;
        let du = 1e-6;
        for k in 1..h - 1 {
            let u = k as f64 / span;
            let fd: Vec<f64> = s
                .eval(u + du)
                .iter()
                .zip(s.eval(u - du))
                .map(|(a, b)| (a - b) / (2.0 * du) / (span * dt))
                .collect();
            assert!(dist(&fd, &traj.velocity(k)) < 1e-3, "step {k}");
        }
    }

    #[test]
    fn degenerate_path_is_constant() {
        let t = bspline_smooth(&vec![vec![0.2, 0.1]; 3], 10, 0.1).unwrap();
        for k in 0..10 {
            assert_eq!(t.position(k), vec![0.2, 0.1]);
            assert_eq!(t.velocity(k), vec![0.0, 0.0]);
        }
        assert!(bspline_smooth(&[vec![0.0]], 10, 0.1).is_err());
    }

    #[test]
    fn duplicate_waypoints_are_merged() {
        let mut path = zigzag();
        path.insert(2, path[2].clone());
        let a = bspline_smooth(&path, 16, 0.1).unwrap();
        let b = bspline_smooth(&zigzag(), 16, 0.1).unwrap();
        assert_eq!(a.states, b.states);
    }
}
