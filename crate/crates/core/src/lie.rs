//! SO(3) exponential/logarithm and the SE(3) distance used by the
//! end-effector cost.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose3;

const SMALL_ANGLE: f64 = 1e-6;
const NEAR_PI: f64 = 1e-3;

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee_antisym(r: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Axis-angle vector of `r`, with norm in `[0, π]`.
pub fn so3_log_map(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if ortho > 1e-6 || (det - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "rotation not orthonormal (|RᵀR−I|∞ = {ortho:e}, det = {det})"
        )));
    }
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let v = vee_antisym(r);
    // atan2 stays accurate near 0 and π where acos does not.
    let theta = (0.5 * v.norm()).atan2(cos);
    if theta < SMALL_ANGLE {
        // θ/(2 sin θ) = ½(1 + θ²/6 + …)
        return Ok(0.5 * (1.0 + theta * theta / 6.0) * v);
    }
    if std::f64::consts::PI - theta < NEAR_PI {
        // (1 − cos θ) n nᵀ = sym(R) − cos θ · I; take the best-conditioned column.
        let s = 0.5 * (r + r.transpose()) - cos * Matrix3::identity();
        let i = (0..3)
            .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
            .unwrap();
        let mut n = s.column(i).into_owned();
        n /= n.norm();
        if n.dot(&v) < 0.0 {
            n = -n;
        }
        return Ok(theta * n);
    }
    Ok(theta / (2.0 * theta.sin()) * v)
}

/// `‖p₁ − p₂‖² + ‖Log(R₁ᵀ R₂)‖`: squared translation plus rotation angle.
pub fn se3_distance(a: &Pose3, b: &Pose3) -> Result<f64> {
    let dp = (a.position - b.position).norm_squared();
    let rel = a.rotation.transpose() * b.rotation;
    Ok(dp + so3_log_map(&rel)?.norm())
}
