//! Closed-form alignment of up-to-scale camera positions with preintegrated
//! IMU motion.
//!
//! Unknowns are stacked as `[v₀ … v_{N−1}, g, s]` (3N + 4 entries): world
//! frame body velocities, world gravity and the metric scale of the camera
//! track. Each consecutive keyframe pair contributes six equations.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};
use crate::geometry::{Rot3, Vec3};
use crate::linalg::lstsq_col_piv_qr;
use crate::preintegration::PreintegratedDelta;

/// Smallest window the stacked system is overdetermined for.
pub const MIN_KEYFRAMES: usize = 4;
/// Scales below this are rejected as degenerate geometry.
pub const MIN_SCALE: f64 = 1e-3;

/// Keyframe window: body orientations and up-to-scale camera positions.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeTrack {
    pub times: Vec<f64>,
    /// Body-to-world rotations R^w_{b_k}.
    pub rotations: Vec<Rot3>,
    /// Up-to-scale camera positions p̄^w_{c_k}.
    pub positions: Vec<Vec3>,
}

impl KeyframeTrack {
    pub fn new(times: Vec<f64>, rotations: Vec<Rot3>, positions: Vec<Vec3>) -> Result<Self> {
        if rotations.len() != times.len() {
            return Err(Error::LengthMismatch { what: "keyframe times and rotations", left: times.len(), right: rotations.len() });
        }
        if positions.len() != times.len() {
            return Err(Error::LengthMismatch { what: "keyframe times and positions", left: times.len(), right: positions.len() });
        }
        if let Some(i) = (1..times.len()).find(|&i| times[i] <= times[i - 1]) {
            return Err(Error::NonMonotonic { index: i, t: times[i] });
        }
        Ok(Self { times, rotations, positions })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Same track with the rotations replaced.
    pub fn with_rotations(&self, rotations: Vec<Rot3>) -> Result<Self> {
        Self::new(self.times.clone(), rotations, self.positions.clone())
    }
}

/// Known camera-to-body transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrinsics {
    /// R^b_c
    pub rotation: Rot3,
    /// p^b_c, metres.
    pub translation: Vec3,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self { rotation: Rot3::identity(), translation: Vec3::zeros() }
    }
}

impl Extrinsics {
    /// Body orientation from a camera orientation: R^w_b = R^w_c · (R^b_c)ᵀ.
    pub fn body_rotation(&self, camera_rotation: &Rot3) -> Rot3 {
        camera_rotation * self.rotation.inverse()
    }

    pub fn camera_rotation(&self, body_rotation: &Rot3) -> Rot3 {
        body_rotation * self.rotation
    }

    /// Body position from a metric camera position.
    pub fn body_position(&self, camera_position: &Vec3, body_rotation: &Rot3) -> Vec3 {
        camera_position - body_rotation * self.translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub velocities: Vec<Vec3>,
    pub gravity: Vec3,
    pub scale: f64,
}

impl LinearSolution {
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.velocities.len();
        let mut x = DVector::zeros(3 * n + 4);
        for (k, v) in self.velocities.iter().enumerate() {
            x.fixed_rows_mut::<3>(3 * k).copy_from(v);
        }
        x.fixed_rows_mut::<3>(3 * n).copy_from(&self.gravity);
        x[3 * n + 3] = self.scale;
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Result<Self> {
        if x.len() < 4 || !(x.len() - 4).is_multiple_of(3) {
            return Err(Error::InvalidInput(format!("state vector of length {} has no 3N+4 layout", x.len())));
        }
        let n = (x.len() - 4) / 3;
        Ok(Self {
            velocities: (0..n).map(|k| x.fixed_rows::<3>(3 * k).into_owned()).collect(),
            gravity: x.fixed_rows::<3>(3 * n).into_owned(),
            scale: x[3 * n + 3],
        })
    }
}

/// Rows 0..2 (position) and 3..5 (velocity) of pair `k`'s equations.
pub fn build_block(
    k: usize,
    track: &KeyframeTrack,
    extrinsics: &Extrinsics,
    delta: &PreintegratedDelta,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = track.len();
    if n < 2 || k + 1 >= n {
        return Err(Error::PairOutOfRange { k, n });
    }
    let r_bw: Matrix3<f64> = track.rotations[k].matrix().transpose();
    let r_wb_next = track.rotations[k + 1].matrix();
    let dt = delta.dt;
    let g = 3 * n;

    let mut a = DMatrix::zeros(6, 3 * n + 4);
    a.fixed_view_mut::<3, 3>(0, 3 * k).copy_from(&(-r_bw * dt));
    a.fixed_view_mut::<3, 3>(0, g).copy_from(&(-r_bw * (0.5 * dt * dt)));
    a.fixed_view_mut::<3, 1>(0, g + 3)
        .copy_from(&(r_bw * (track.positions[k + 1] - track.positions[k])));
    a.fixed_view_mut::<3, 3>(3, 3 * k).copy_from(&(-r_bw));
    a.fixed_view_mut::<3, 3>(3, 3 * (k + 1)).copy_from(&r_bw);
    a.fixed_view_mut::<3, 3>(3, g).copy_from(&(-r_bw * dt));

    let lever = extrinsics.translation;
    let mut b = DVector::zeros(6);
    b.fixed_rows_mut::<3>(0)
        .copy_from(&(delta.dp - lever + r_bw * r_wb_next * lever));
    b.fixed_rows_mut::<3>(3).copy_from(&delta.dv);
    Ok((a, b))
}

/// Stacks every pair block into one `6(N−1) × (3N+4)` system.
pub fn stack_system(
    track: &KeyframeTrack,
    extrinsics: &Extrinsics,
    deltas: &[PreintegratedDelta],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = track.len();
    if deltas.len() + 1 != n {
        return Err(Error::LengthMismatch { what: "preintegrated intervals and keyframe pairs", left: deltas.len(), right: n.saturating_sub(1) });
    }
    let mut a = DMatrix::zeros(6 * (n - 1), 3 * n + 4);
    let mut b = DVector::zeros(6 * (n - 1));
    for (k, delta) in deltas.iter().enumerate() {
        let (ak, bk) = build_block(k, track, extrinsics, delta)?;
        a.rows_mut(6 * k, 6).copy_from(&ak);
        b.rows_mut(6 * k, 6).copy_from(&bk);
    }
    Ok((a, b))
}

/// Solves the stacked system by column-pivoted QR.
pub fn solve_initial(
    track: &KeyframeTrack,
    extrinsics: &Extrinsics,
    deltas: &[PreintegratedDelta],
) -> Result<LinearSolution> {
    if track.len() < MIN_KEYFRAMES {
        return Err(Error::TooFewKeyframes { required: MIN_KEYFRAMES, got: track.len() });
    }
    let (a, b) = stack_system(track, extrinsics, deltas)?;
    let solution = LinearSolution::from_vector(&lstsq_col_piv_qr(&a, &b)?.x)?;
    if !solution.scale.is_finite() || solution.scale < MIN_SCALE {
        return Err(Error::DegenerateScale { scale: solution.scale });
    }
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;
    use crate::preintegration::{preintegrate, ImuSample};

    fn stationary_delta(dt: f64) -> PreintegratedDelta {
        let samples: Vec<ImuSample> = (0..=20)
            .map(|i| ImuSample::new(i as f64 * dt / 20.0, Vec3::zeros(), Vec3::new(0.0, 0.0, 9.81)))
            .collect();
        preintegrate(&samples, &Vec3::zeros(), &Vec3::zeros()).unwrap()
    }

    fn still_track(n: usize) -> KeyframeTrack {
        KeyframeTrack::new(
            (0..n).map(|k| k as f64 * 0.1).collect(),
            vec![Rot3::identity(); n],
            vec![Vec3::zeros(); n],
        )
        .unwrap()
    }

    #[test]
    fn two_keyframe_block_shape() {
        let (a, b) = build_block(0, &still_track(2), &Extrinsics::default(), &stationary_delta(0.1)).unwrap();
        assert_eq!(a.shape(), (6, 10));
        assert_eq!(b.len(), 6);
    }

    #[test]
    fn stationary_identity_block_rhs_is_the_increment() {
        let delta = stationary_delta(0.1);
        let (_, b) = build_block(1, &still_track(4), &Extrinsics::default(), &delta).unwrap();
        assert_eq!(b.fixed_rows::<3>(0).into_owned(), delta.dp);
        assert_eq!(b.fixed_rows::<3>(3).into_owned(), delta.dv);
    }

    #[test]
    fn block_layout_places_entries() {
        let n = 5;
        let mut track = still_track(n);
        track.rotations[2] = exp_so3(&Vec3::new(0.1, 0.2, 0.3));
        track.positions[3] = Vec3::new(1.0, 2.0, 3.0);
        let delta = stationary_delta(0.1);
        let (a, _) = build_block(2, &track, &Extrinsics::default(), &delta).unwrap();
        let rt = track.rotations[2].matrix().transpose();
        assert_eq!(a.fixed_view::<3, 3>(0, 6).into_owned(), -rt * delta.dt);
        assert_eq!(a.fixed_view::<3, 3>(3, 9).into_owned(), rt);
        assert_eq!(a.fixed_view::<3, 1>(0, 3 * n + 3).into_owned(), rt * Vec3::new(1.0, 2.0, 3.0));
        // velocity columns of other keyframes stay empty
        assert_eq!(a.columns(0, 6).abs().max(), 0.0);
        assert_eq!(a.columns(12, 3).abs().max(), 0.0);
        assert_eq!(a[(3, 3 * n + 3)], 0.0);
    }

    #[test]
    fn pair_index_out_of_range() {
        let err = build_block(3, &still_track(4), &Extrinsics::default(), &stationary_delta(0.1)).unwrap_err();
        assert!(matches!(err, Error::PairOutOfRange { k: 3, n: 4 }));
    }

    #[test]
    fn short_windows_are_rejected() {
        let deltas = vec![stationary_delta(0.1); 2];
        let err = solve_initial(&still_track(3), &Extrinsics::default(), &deltas).unwrap_err();
        assert!(matches!(err, Error::TooFewKeyframes { required: 4, got: 3 }));
    }

    #[test]
    fn no_translation_means_no_scale() {
        // a rotating-in-place body never moves the camera: scale is unobservable
        let deltas = vec![stationary_delta(0.1); 4];
        let err = solve_initial(&still_track(5), &Extrinsics::default(), &deltas).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }), "{err:?}");
    }

    #[test]
    fn vector_layout_round_trip() {
        let sol = LinearSolution {
            velocities: vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)],
            gravity: Vec3::new(0.0, 0.0, -9.81),
            scale: 2.0,
        };
        let x = sol.to_vector();
        assert_eq!(x.len(), 10);
        assert_eq!(x[9], 2.0);
        assert_eq!(LinearSolution::from_vector(&x).unwrap(), sol);
    }

    #[test]
    fn track_validation() {
        assert!(KeyframeTrack::new(vec![0.0, 0.0], vec![Rot3::identity(); 2], vec![Vec3::zeros(); 2]).is_err());
        assert!(KeyframeTrack::new(vec![0.0, 1.0], vec![Rot3::identity(); 1], vec![Vec3::zeros(); 2]).is_err());
    }
}
