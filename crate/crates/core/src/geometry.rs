//! SO(3) primitives: hat operator, exponential and logarithm maps, right
//! Jacobian and its inverse.
//!
//! Rotations are `nalgebra::Rotation3<f64>` (a matrix-backed rotation). All
//! perturbations are on the right: `R ⊕ δ = R · Exp(δ)`.
//! Quaternions only appear at file boundaries, in `[qx, qy, qz, qw]` order.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Rot3 = Rotation3<f64>;

/// Below this angle `exp_so3` uses its second-order series.
pub const EXP_TAYLOR_THRESHOLD: f64 = 1e-8;
/// Below this angle the Jacobians use their series expansions.
pub const JACOBIAN_TAYLOR_THRESHOLD: f64 = 1e-6;
/// Largest tolerated orthonormality residual accepted by [`log_so3`].
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

/// Hat operator: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Rodrigues' formula.
pub fn exp_so3(phi: &Vec3) -> Rot3 {
    let theta = phi.norm();
    let k = skew(phi);
    let m = if theta < EXP_TAYLOR_THRESHOLD {
        Mat3::identity() + k + 0.5 * k * k
    } else {
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Mat3::identity() + a * k + b * k * k
    };
    Rot3::from_matrix_unchecked(m)
}

/// Max-entry residual of `RᵀR − I` together with the deviation of det(R) from one.
pub fn orthonormality_residual(m: &Mat3) -> f64 {
    let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
    ortho.max((m.determinant() - 1.0).abs())
}

/// Logarithm map. Rejects matrices that are not rotations.
///
/// The returned angle lies in `[0, π]`. At exactly π the axis sign is chosen
/// so that its component with the largest magnitude is positive.
pub fn log_so3(r: &Rot3) -> Result<Vec3> {
    let residual = orthonormality_residual(r.matrix());
    if !residual.is_finite() || residual > ORTHONORMAL_TOLERANCE {
        return Err(Error::NotRotation { residual });
    }
    Ok(log_so3_unchecked(r.matrix()))
}

pub(crate) fn log_so3_unchecked(m: &Mat3) -> Vec3 {
    let w = vee(m); // sin(θ)·n
    let sin_theta = w.norm();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if cos_theta > -0.9 {
        if theta < EXP_TAYLOR_THRESHOLD {
            // θ/sinθ ≈ 1 + θ²/6
            return w * (1.0 + theta * theta / 6.0);
        }
        return w * (theta / sin_theta);
    }

    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part, B = (1 − cosθ)·n·nᵀ.
    let b = (m + m.transpose()) * 0.5 - Mat3::identity() * cos_theta;
    let i = (0..3)
        .max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)]))
        .unwrap_or(0);
    let mut axis = b.column(i).into_owned() / b[(i, i)].max(f64::MIN_POSITIVE).sqrt();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < JACOBIAN_TAYLOR_THRESHOLD {
        return Mat3::identity() - 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Mat3::identity() - (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
}

/// Inverse of the right Jacobian, valid for `‖phi‖ < π`.
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < JACOBIAN_TAYLOR_THRESHOLD {
        return Mat3::identity() + 0.5 * k + k * k / 12.0;
    }
    let c = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + 0.5 * k + c * k * k
}

/// Geodesic angle between two rotations, in radians.
pub fn geodesic_angle(a: &Rot3, b: &Rot3) -> f64 {
    log_so3_unchecked((a.transpose() * b).matrix()).norm()
}

/// Nearest rotation (Frobenius sense) to an arbitrary 3×3 matrix.
pub fn project_to_so3(m: &Mat3) -> Rot3 {
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Rot3::identity();
    };
    let d = (u * v_t).determinant().signum();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    Rot3::from_matrix_unchecked(u * fix * v_t)
}

/// Builds a rotation from a `[qx, qy, qz, qw]` quaternion, rejecting inputs
/// whose norm deviates from one by more than `1e-3`.
pub fn rotation_from_quaternion(q: [f64; 4]) -> Result<Rot3> {
    let [x, y, z, w] = q;
    let norm = (x * x + y * y + z * z + w * w).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
        return Err(Error::InvalidInput(format!("quaternion norm {norm} is not unit")));
    }
    let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
    Ok(uq.to_rotation_matrix())
}

/// `[qx, qy, qz, qw]` with `qw ≥ 0`.
pub fn quaternion_from_rotation(r: &Rot3) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let q = q.quaternion();
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.i, s * q.j, s * q.k, s * q.w]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Scaling and squaring with a truncated Taylor series; independent of Rodrigues.
    fn expm_oracle(a: &Mat3) -> Mat3 {
        let mut squarings = 0;
        let mut scaled = *a;
        while scaled.abs().max() > 0.05 {
            scaled /= 2.0;
            squarings += 1;
        }
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for k in 1..30 {
            term = term * scaled / k as f64;
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let s = skew(&Vec3::x());
        let expected = Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(s, expected);
    }

    #[test]
    fn exp_examples() {
        assert_eq!(exp_so3(&Vec3::zeros()).into_inner(), Mat3::identity());
        let r = exp_so3(&Vec3::new(FRAC_PI_2, 0.0, 0.0));
        assert_relative_eq!(r * Vec3::y(), Vec3::z(), epsilon = 1e-15);
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Rot3::identity()).unwrap(), Vec3::zeros());
        let phi = Vec3::new(0.3, -0.2, 0.1);
        assert_relative_eq!(log_so3(&exp_so3(&phi)).unwrap(), phi, epsilon = 1e-14);
    }

    #[test]
    fn log_at_pi_about_diagonal_axis() {
        let axis = Vec3::new(1.0, 1.0, 1.0).normalize();
        let r = exp_so3(&(axis * PI));
        let phi = log_so3(&r).unwrap();
        assert_relative_eq!(phi.norm(), PI, epsilon = 1e-9);
        assert_relative_eq!(phi.normalize().dot(&axis).abs(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(exp_so3(&phi).into_inner(), r.into_inner(), epsilon = 1e-9);
    }

    #[test]
    fn log_near_pi_keeps_sign() {
        let axis = Vec3::new(0.2, -0.5, 0.8).normalize();
        for delta in [1e-2, 1e-4, 1e-7, 1e-10] {
            let phi = axis * (PI - delta);
            let back = log_so3(&exp_so3(&phi)).unwrap();
            assert_relative_eq!(back, phi, epsilon = 1e-8);
        }
    }

    #[test]
    fn log_rejects_non_rotation() {
        let m = Mat3::identity() * 1.01;
        let err = log_so3(&Rot3::from_matrix_unchecked(m)).unwrap_err();
        assert!(matches!(err, Error::NotRotation { .. }));
    }

    #[test]
    fn right_jacobian_inv_at_zero() {
        assert_eq!(right_jacobian_inv(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn right_jacobian_inv_matches_finite_differences() {
        // Log(Exp(φ)·Exp(δ)) ≈ φ + J_r⁻¹(φ)·δ
        let phi = Vec3::new(0.7, -0.4, 1.1);
        let jinv = right_jacobian_inv(&phi);
        let r = exp_so3(&phi);
        let h = 1e-5;
        for i in 0..3 {
            let mut d = Vec3::zeros();
            d[i] = h;
            let plus = log_so3(&(r * exp_so3(&d))).unwrap();
            let minus = log_so3(&(r * exp_so3(&-d))).unwrap();
            let col = (plus - minus) / (2.0 * h);
            assert_relative_eq!(col, jinv.column(i).into_owned(), epsilon = 1e-9);
        }
    }

    #[test]
    fn taylor_branches_are_continuous() {
        let axis = Vec3::new(0.3, 0.5, -0.2).normalize();
        let below = axis * (JACOBIAN_TAYLOR_THRESHOLD * 0.999);
        let above = axis * (JACOBIAN_TAYLOR_THRESHOLD * 1.001);
        // the inputs differ by ~2e-9, so the outputs may differ by about as much
        assert_relative_eq!(right_jacobian_inv(&below), right_jacobian_inv(&above), epsilon = 5e-9);
        assert_relative_eq!(right_jacobian(&below), right_jacobian(&above), epsilon = 5e-9);
        let below = axis * (EXP_TAYLOR_THRESHOLD * 0.999);
        let above = axis * (EXP_TAYLOR_THRESHOLD * 1.001);
        assert_relative_eq!(exp_so3(&below).into_inner(), exp_so3(&above).into_inner(), epsilon = 1e-10);
    }

    #[test]
    fn quaternion_examples() {
        let r = rotation_from_quaternion([0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.into_inner(), Mat3::identity());
        let r = rotation_from_quaternion([0.0, 0.0, std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]).unwrap();
        assert_relative_eq!(r * Vec3::x(), Vec3::y(), epsilon = 1e-12);
        assert!(rotation_from_quaternion([0.0, 0.0, 0.0, 1.01]).is_err());
    }

    proptest! {
        #[test]
        fn skew_is_cross_product(v in vec3(), w in vec3()) {
            let oracle = Vec3::new(v.y * w.z - v.z * w.y, v.z * w.x - v.x * w.z, v.x * w.y - v.y * w.x);
            prop_assert!((skew(&v) * w - oracle).norm() < 1e-14);
            prop_assert!((skew(&v) + skew(&v).transpose()).norm() == 0.0);
        }

        #[test]
        fn exp_matches_matrix_exponential(phi in vec3()) {
            let oracle = expm_oracle(&skew(&phi));
            prop_assert!((exp_so3(&phi).into_inner() - oracle).abs().max() < 1e-10);
        }

        #[test]
        fn exp_is_a_rotation(phi in vec3()) {
            prop_assert!(orthonormality_residual(exp_so3(&phi).matrix()) < 1e-9);
        }

        #[test]
        fn log_inverts_exp(phi in vec3()) {
            prop_assume!(phi.norm() < PI - 1e-6);
            let back = log_so3(&exp_so3(&phi)).unwrap();
            prop_assert!((back - phi).abs().max() < 1e-8);
        }

        #[test]
        fn exp_inverts_log(phi in vec3(), scale in 0.0..1.0f64) {
            // any rotation, including angles right up to π
            let r = exp_so3(&(phi.normalize() * PI * scale.sqrt()));
            let back = exp_so3(&log_so3(&r).unwrap());
            prop_assert!((back.into_inner() - r.into_inner()).abs().max() < 1e-8);
            prop_assert!(log_so3(&r).unwrap().norm() <= PI + 1e-12);
        }

        #[test]
        fn jacobian_times_inverse_is_identity(phi in vec3()) {
            let theta = phi.norm();
            prop_assume!(theta > 1e-8 && theta < PI - 0.1);
            let prod = right_jacobian(&phi) * right_jacobian_inv(&phi);
            prop_assert!((prod - Mat3::identity()).abs().max() < 1e-9);
        }

        #[test]
        fn quaternion_round_trip(phi in vec3()) {
            let r = exp_so3(&phi);
            let back = rotation_from_quaternion(quaternion_from_rotation(&r)).unwrap();
            prop_assert!((back.into_inner() - r.into_inner()).abs().max() < 1e-12);
        }
    }
}
