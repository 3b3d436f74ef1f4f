//! Accuracy metrics: similarity alignment, scale error, rotation RMSE,
//! absolute trajectory error, gravity and bias errors.

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{log_so3_unchecked, project_to_so3, Rot3, Vec3};

/// Relative threshold on the second singular value of the cross-covariance.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Rot3,
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }
}

fn check_pair<T>(what: &'static str, a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { what, left: a.len(), right: b.len() });
    }
    Ok(())
}

/// Closed-form transform minimizing `Σ‖gt − (s·R·est + t)‖²`; `s` is fixed
/// to one unless `with_scale` is set.
pub fn align_umeyama(est: &[Vec3], gt: &[Vec3], with_scale: bool) -> Result<Similarity> {
    check_pair("estimated and reference positions", est, gt)?;
    if est.len() < 3 {
        return Err(Error::DegenerateAlignment(format!("{} correspondences, need at least 3", est.len())));
    }
    let n = est.len() as f64;
    let mu_e = est.iter().sum::<Vec3>() / n;
    let mu_g = gt.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let de = e - mu_e;
        cov += (g - mu_g) * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= n;
    var_e /= n;

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut sv = svd.singular_values;
    // nalgebra does not sort singular values for 3×3 inputs
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[0].is_nan() || sorted[0] <= 0.0 || sorted[1] <= DEGENERACY_TOLERANCE * sorted[0] {
        return Err(Error::DegenerateAlignment("point sets are collinear or coincident".into()));
    }
    let mut d = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        let smallest = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).expect("three values");
        d[(smallest, smallest)] = -1.0;
        sv[smallest] = -sv[smallest];
    }
    let rotation = Rot3::from_matrix_unchecked(u * d * v_t);
    let scale = if with_scale { sv.sum() / var_e } else { 1.0 };
    let translation = mu_g - scale * (rotation * mu_e);
    Ok(Similarity { scale, rotation, translation })
}

/// Scale of an estimated trajectory relative to the reference: the factor
/// that maps the reference onto the estimate.
pub fn trajectory_scale(est: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    Ok(align_umeyama(gt, est, true)?.scale)
}

/// `|1 − ŝ|·100`, in percent.
pub fn scale_error(s_hat: f64) -> f64 {
    (1.0 - s_hat).abs() * 100.0
}

/// Root mean square geodesic error of `est` against `gt`, optionally after
/// removing the best single left-multiplied rotation offset.
pub fn rotation_rmse(est: &[Rot3], gt: &[Rot3], remove_offset: bool) -> Result<f64> {
    check_pair("estimated and reference rotations", est, gt)?;
    if est.is_empty() {
        return Err(Error::InvalidInput("no rotations to compare".into()));
    }
    let offset = if remove_offset {
        let m: Matrix3<f64> = est.iter().zip(gt).map(|(e, g)| g.matrix() * e.matrix().transpose()).sum();
        project_to_so3(&m)
    } else {
        Rot3::identity()
    };
    let ms = est
        .iter()
        .zip(gt)
        .map(|(e, g)| log_so3_unchecked((g.inverse() * offset * e).matrix()).norm_squared())
        .sum::<f64>()
        / est.len() as f64;
    Ok(ms.sqrt())
}

/// Position RMSE after rigid alignment of `est` onto `gt`.
pub fn ate(est: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    let t = align_umeyama(est, gt, false)?;
    Ok(rms(est.iter().zip(gt).map(|(e, g)| (t.apply(e) - g).norm_squared())))
}

fn rms(squares: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = squares.len() as f64;
    (squares.sum::<f64>() / n).sqrt()
}

/// Angle between two gravity vectors, degrees.
pub fn gravity_angle_deg(est: &Vec3, truth: &Vec3) -> f64 {
    est.angle(truth).to_degrees()
}

pub fn velocity_rmse(est: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_pair("estimated and reference velocities", est, gt)?;
    if est.is_empty() {
        return Err(Error::InvalidInput("no velocities to compare".into()));
    }
    Ok(rms(est.iter().zip(gt).map(|(e, g)| (e - g).norm_squared())))
}

/// One evaluated run. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Scale error from aligning the metric keyframe positions, %.
    pub scale_error_pct: f64,
    /// Scale of the metric estimate relative to ground truth.
    pub scale_hat: f64,
    /// Scale solved by the pipeline.
    pub pipeline_scale: f64,
    /// `|1 − ŝ_pipeline / s_true|·100`, when the true scale is known.
    pub pipeline_scale_error_pct: Option<f64>,
    pub grav_angle_err_deg: f64,
    /// Rotation RMSE of the corrected keyframe orientations, rad.
    pub rot_rmse: f64,
    /// Same metric for the raw orientation observations, rad.
    pub obs_rot_rmse: Option<f64>,
    pub ate: f64,
    pub vel_rmse: Option<f64>,
    pub bg_err: Option<f64>,
    pub ba_err: Option<f64>,
}

impl EvalReport {
    pub const CSV_COLUMNS: [&'static str; 11] = [
        "scale_error_pct",
        "scale_hat",
        "pipeline_scale",
        "pipeline_scale_error_pct",
        "grav_angle_err_deg",
        "rot_rmse",
        "obs_rot_rmse",
        "ate",
        "vel_rmse",
        "bg_err",
        "ba_err",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.scale_error_pct,
            self.scale_hat,
            self.pipeline_scale,
            self.pipeline_scale_error_pct.unwrap_or(f64::NAN),
            self.grav_angle_err_deg,
            self.rot_rmse,
            self.obs_rot_rmse.unwrap_or(f64::NAN),
            self.ate,
            self.vel_rmse.unwrap_or(f64::NAN),
            self.bg_err.unwrap_or(f64::NAN),
            self.ba_err.unwrap_or(f64::NAN),
        ]
    }

    /// Inverse of [`EvalReport::values`]; NaN in an optional column means absent.
    pub fn from_values(v: &[f64; 11]) -> Self {
        let opt = |x: f64| (!x.is_nan()).then_some(x);
        Self {
            scale_error_pct: v[0],
            scale_hat: v[1],
            pipeline_scale: v[2],
            pipeline_scale_error_pct: opt(v[3]),
            grav_angle_err_deg: v[4],
            rot_rmse: v[5],
            obs_rot_rmse: opt(v[6]),
            ate: v[7],
            vel_rmse: opt(v[8]),
            bg_err: opt(v[9]),
            ba_err: opt(v[10]),
        }
    }

    pub fn csv_header() -> String {
        Self::CSV_COLUMNS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        format_row(&self.values())
    }
}

/// Reference quantities; anything unknown is left out of the report.
#[derive(Debug, Clone)]
pub struct Reference<'a> {
    pub scale: Option<f64>,
    pub gravity: Vec3,
    pub velocities: Option<&'a [Vec3]>,
    pub gyro_bias: Option<Vec3>,
    pub accel_bias: Option<Vec3>,
}

/// An estimate paired with ground truth at the same keyframes.
#[derive(Debug, Clone)]
pub struct EvalInputs<'a> {
    /// Metric camera positions of the estimate.
    pub positions: &'a [Vec3],
    pub gt_positions: &'a [Vec3],
    /// Corrected camera orientations.
    pub rotations: &'a [Rot3],
    pub gt_rotations: &'a [Rot3],
    /// Orientations the estimator was fed, for comparison.
    pub observed_rotations: Option<&'a [Rot3]>,
    pub pipeline_scale: f64,
    pub gravity: Vec3,
    pub velocities: &'a [Vec3],
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    pub reference: Reference<'a>,
    pub remove_rotation_offset: bool,
}

/// Computes every metric of [`EvalReport`].
///
/// Gravity and velocities are rotated into the reference frame with the
/// rotation of the similarity alignment before comparison.
pub fn evaluate(inputs: &EvalInputs<'_>) -> Result<EvalReport> {
    let r = &inputs.reference;
    let align = align_umeyama(inputs.positions, inputs.gt_positions, true)?;
    let scale_hat = trajectory_scale(inputs.positions, inputs.gt_positions)?;
    let velocity_err = match r.velocities {
        Some(gt) => {
            let v: Vec<Vec3> = inputs.velocities.iter().map(|v| align.rotation * v).collect();
            Some(velocity_rmse(&v, gt)?)
        }
        None => None,
    };
    Ok(EvalReport {
        scale_error_pct: scale_error(scale_hat),
        scale_hat,
        pipeline_scale: inputs.pipeline_scale,
        pipeline_scale_error_pct: r.scale.map(|s| scale_error(inputs.pipeline_scale / s)),
        grav_angle_err_deg: gravity_angle_deg(&(align.rotation * inputs.gravity), &r.gravity),
        rot_rmse: rotation_rmse(inputs.rotations, inputs.gt_rotations, inputs.remove_rotation_offset)?,
        obs_rot_rmse: match inputs.observed_rotations {
            Some(obs) => Some(rotation_rmse(obs, inputs.gt_rotations, inputs.remove_rotation_offset)?),
            None => None,
        },
        ate: ate(inputs.positions, inputs.gt_positions)?,
        vel_rmse: velocity_err,
        bg_err: r.gyro_bias.map(|b| (inputs.gyro_bias - b).norm()),
        ba_err: r.accel_bias.map(|b| (inputs.accel_bias - b).norm()),
    })
}

/// Comma-joined values with empty cells for NaN.
pub fn format_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| if v.is_nan() { String::new() } else { format!("{v:?}") })
        .collect::<Vec<_>>()
        .join(",")
}

/// Median ignoring NaN entries; NaN when nothing remains.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Column-wise medians of a batch of reports.
pub fn median_row(reports: &[EvalReport]) -> [f64; 11] {
    std::array::from_fn(|c| median(&reports.iter().map(|r| r.values()[c]).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, geodesic_angle};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0))).collect()
    }

    #[test]
    fn identity_alignment() {
        let p = cloud(1, 10);
        let t = align_umeyama(&p, &p, true).unwrap();
        assert_relative_eq!(t.scale, 1.0, epsilon = 1e-12);
        assert_relative_eq!(t.rotation.into_inner(), Matrix3::identity(), epsilon = 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn half_scale_gives_two() {
        let gt = cloud(2, 10);
        let est: Vec<Vec3> = gt.iter().map(|p| p * 0.5).collect();
        assert_relative_eq!(align_umeyama(&est, &gt, true).unwrap().scale, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(align_umeyama(&line, &line, true), Err(Error::DegenerateAlignment(_))));
        assert!(align_umeyama(&line[..2], &line[..2], true).is_err());
    }

    /// Brute-force oracle: Gauss-Newton on (log R, t, log s) with numeric
    /// derivatives, started from identity.
    fn numeric_similarity(est: &[Vec3], gt: &[Vec3]) -> Similarity {
        let apply = |x: &[f64; 7], p: &Vec3| {
            exp_so3(&Vec3::new(x[0], x[1], x[2])) * p * x[6].exp() + Vec3::new(x[3], x[4], x[5])
        };
        let residuals = |x: &[f64; 7]| -> Vec<f64> {
            est.iter().zip(gt).flat_map(|(e, g)| {
                let r = apply(x, e) - g;
                [r.x, r.y, r.z]
            }).collect()
        };
        let mut x = [0.0; 7];
        for _ in 0..100 {
            let r0 = residuals(&x);
            let mut jac = nalgebra::DMatrix::zeros(r0.len(), 7);
            for j in 0..7 {
                let mut xp = x;
                xp[j] += 1e-7;
                let rp = residuals(&xp);
                for i in 0..r0.len() {
                    jac[(i, j)] = (rp[i] - r0[i]) / 1e-7;
                }
            }
            let r = nalgebra::DVector::from_vec(r0);
            let step = (jac.transpose() * &jac).cholesky().unwrap().solve(&(jac.transpose() * -r));
            for j in 0..7 {
                x[j] += step[j];
            }
            if step.norm() < 1e-14 {
                break;
            }
        }
        Similarity {
            scale: x[6].exp(),
            rotation: exp_so3(&Vec3::new(x[0], x[1], x[2])),
            translation: Vec3::new(x[3], x[4], x[5]),
        }
    }

    #[test]
    fn matches_iterative_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..5 {
            let est = cloud(seed + 10, 15);
            let r = exp_so3(&Vec3::new(0.3, -0.2, 0.5));
            let (s, t) = (1.7, Vec3::new(0.5, -1.0, 2.0));
            let gt: Vec<Vec3> = est
                .iter()
                .map(|p| s * (r * p) + t + Vec3::from_fn(|_, _| rng.random_range(-0.05..0.05)))
                .collect();
            let closed = align_umeyama(&est, &gt, true).unwrap();
            let oracle = numeric_similarity(&est, &gt);
            assert!((closed.scale - oracle.scale).abs() < 1e-6);
            assert!(geodesic_angle(&closed.rotation, &oracle.rotation) < 1e-6);
            assert!((closed.translation - oracle.translation).norm() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn recovers_inverse_scale(s in 0.01..100.0f64, seed in 0u64..1000) {
            let p = cloud(seed, 8);
            let scaled: Vec<Vec3> = p.iter().map(|x| x * s).collect();
            let fit = align_umeyama(&scaled, &p, true).unwrap();
            prop_assert!((fit.scale * s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn scale_error_ignores_rigid_motion(
            rx in -3.0..3.0f64, ry in -3.0..3.0f64, rz in -3.0..3.0f64,
            tx in -10.0..10.0f64, s in 0.5..2.0f64, seed in 0u64..1000,
        ) {
            let gt = cloud(seed, 10);
            let est: Vec<Vec3> = gt.iter().map(|p| p * s + Vec3::new(0.01, 0.0, 0.0) * p.x.powi(2)).collect();
            let base = trajectory_scale(&est, &gt).unwrap();
            let q = exp_so3(&Vec3::new(rx, ry, rz));
            let moved: Vec<Vec3> = est.iter().map(|p| q * p + Vec3::new(tx, -tx, 0.5 * tx)).collect();
            prop_assert!((scale_error(trajectory_scale(&moved, &gt).unwrap()) - scale_error(base)).abs() < 1e-9);
            let moved_gt: Vec<Vec3> = gt.iter().map(|p| q * p + Vec3::new(tx, 0.0, 0.0)).collect();
            prop_assert!((scale_error(trajectory_scale(&est, &moved_gt).unwrap()) - scale_error(base)).abs() < 1e-9);
        }

        #[test]
        fn rotation_rmse_ignores_common_left_rotation(
            rx in -3.0..3.0f64, ry in -3.0..3.0f64, rz in -3.0..3.0f64, seed in 0u64..1000, remove in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<Rot3> = (0..8).map(|_| exp_so3(&Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)))).collect();
            let est: Vec<Rot3> = gt.iter().map(|g| g * exp_so3(&Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2)))).collect();
            let l = exp_so3(&Vec3::new(rx, ry, rz));
            let a = rotation_rmse(&est, &gt, remove).unwrap();
            let lest: Vec<Rot3> = est.iter().map(|e| l * e).collect();
            let lgt: Vec<Rot3> = gt.iter().map(|g| l * g).collect();
            prop_assert!((rotation_rmse(&lest, &lgt, remove).unwrap() - a).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_error_examples() {
        assert_eq!(scale_error(1.0), 0.0);
        assert_relative_eq!(scale_error(0.942), 5.8, epsilon = 1e-9);
        assert_relative_eq!(scale_error(1.058), 5.8, epsilon = 1e-9);
    }

    #[test]
    fn rotation_rmse_examples() {
        let gt: Vec<Rot3> = (0..10).map(|i| exp_so3(&Vec3::new(0.0, 0.1 * i as f64, 0.0))).collect();
        assert_eq!(rotation_rmse(&gt, &gt, true).unwrap(), 0.0);
        let mut est = gt.clone();
        est[4] *= exp_so3(&Vec3::new(0.2, 0.0, 0.0));
        assert_relative_eq!(rotation_rmse(&est, &gt, false).unwrap(), (0.04f64 / 10.0).sqrt(), epsilon = 1e-12);
        // a common offset disappears only when removal is enabled
        let q = exp_so3(&Vec3::new(0.0, 0.0, 0.3));
        let shifted: Vec<Rot3> = gt.iter().map(|g| q * g).collect();
        assert!(rotation_rmse(&shifted, &gt, true).unwrap() < 1e-12);
        assert_relative_eq!(rotation_rmse(&shifted, &gt, false).unwrap(), 0.3, epsilon = 1e-12);
        assert!(rotation_rmse(&gt[..3], &gt, true).is_err());
    }

    #[test]
    fn ate_examples() {
        let gt = cloud(3, 12);
        assert!(ate(&gt, &gt).unwrap() < 1e-12);
        let shifted: Vec<Vec3> = gt.iter().map(|p| p + Vec3::new(3.0, -1.0, 2.0)).collect();
        assert!(ate(&shifted, &gt).unwrap() < 1e-12);
        let scaled: Vec<Vec3> = gt.iter().map(|p| p * 1.1).collect();
        let small = ate(&scaled, &gt).unwrap();
        let wide: Vec<Vec3> = gt.iter().map(|p| p * 10.0).collect();
        let wide_scaled: Vec<Vec3> = wide.iter().map(|p| p * 1.1).collect();
        assert!(small > 0.0);
        assert!(ate(&wide_scaled, &wide).unwrap() > small);
    }

    #[test]
    fn gravity_and_velocity_errors() {
        let g = Vec3::new(0.0, 0.0, -9.81);
        assert_eq!(gravity_angle_deg(&g, &g), 0.0);
        assert_relative_eq!(gravity_angle_deg(&Vec3::new(9.81, 0.0, 0.0), &g), 90.0, epsilon = 1e-12);
        let v = vec![Vec3::new(1.0, 0.0, 0.0); 4];
        assert_eq!(velocity_rmse(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn ten_percent_scale() {
        let gt = cloud(4, 10);
        let est: Vec<Vec3> = gt.iter().map(|p| p * 1.1).collect();
        assert_relative_eq!(scale_error(trajectory_scale(&est, &gt).unwrap()), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn median_and_rows() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[f64::NAN, 1.0]), 1.0);
        assert!(median(&[]).is_nan());
        assert_eq!(format_row(&[1.0, f64::NAN, 0.5]), "1.0,,0.5");
    }
}
