//! The three estimation stages chained together: gyroscope bias and rotation
//! correction, closed-form alignment, weighted refinement.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::eskf::{estimate_gyro_bias, EskfConfig, OrientationObservation};
use crate::error::Error;
use crate::geometry::{quaternion_from_rotation, rotation_from_quaternion, Rot3, Vec3};
use crate::linear_align::{solve_initial, Extrinsics, KeyframeTrack, LinearSolution};
use crate::preintegration::{preintegrate_keyframes, ImuSample};
use crate::refine::{refine, RefineConfig, RefinedSolution};

pub const DEFAULT_WINDOW_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GyroBias,
    Preintegration,
    LinearAlignment,
    Refinement,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::GyroBias => "gyroscope bias estimation",
            Stage::Preintegration => "preintegration",
            Stage::LinearAlignment => "linear alignment",
            Stage::Refinement => "refinement",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn is_numeric(&self) -> bool {
        self.source.is_numeric()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub eskf: EskfConfig,
    pub refine: RefineConfig,
    /// Number of leading keyframes used; longer tracks are truncated.
    pub window_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { eskf: EskfConfig::default(), refine: RefineConfig::default(), window_size: DEFAULT_WINDOW_SIZE }
    }
}

/// Wall-clock time per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub gyro_bias: Duration,
    pub preintegration: Duration,
    pub linear: Duration,
    pub refine: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.gyro_bias + self.preintegration + self.linear + self.refine
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub keyframe_times: Vec<f64>,
    pub gyro_bias: Vec3,
    /// Filter-corrected body orientations at each keyframe.
    pub rotations: Vec<Rot3>,
    pub linear: LinearSolution,
    pub refined: RefinedSolution,
    pub timings: StageTimings,
}

impl Solution {
    pub fn scale(&self) -> f64 {
        self.refined.scale
    }

    pub fn gravity(&self) -> Vec3 {
        self.refined.gravity
    }

    pub fn accel_bias(&self) -> Vec3 {
        self.refined.accel_bias
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.refined.velocities
    }
}

fn timed<T>(stage: Stage, slot: &mut Duration, f: impl FnOnce() -> crate::Result<T>) -> Result<T, StageError> {
    let start = Instant::now();
    let out = f().map_err(|source| StageError { stage, source });
    *slot = start.elapsed();
    out
}

/// Runs all stages on one keyframe window.
///
/// `observations` carries the body orientations the filter fuses; the track
/// supplies keyframe times and up-to-scale camera positions. Its rotations
/// are replaced by the filter output.
pub fn run(
    imu: &[ImuSample],
    observations: &[OrientationObservation],
    track: &KeyframeTrack,
    extrinsics: &Extrinsics,
    config: &PipelineConfig,
) -> Result<Solution, StageError> {
    let n = track.len().min(config.window_size);
    let mut timings = StageTimings::default();

    let gyro = timed(Stage::GyroBias, &mut timings.gyro_bias, || {
        if observations.len() < n {
            return Err(Error::LengthMismatch { what: "orientation observations and keyframes", left: observations.len(), right: n });
        }
        if let Some(k) = (0..n).find(|&k| (observations[k].t - track.times[k]).abs() > 1e-9) {
            return Err(Error::InvalidInput(format!(
                "observation {k} at t = {} does not match keyframe time {}",
                observations[k].t, track.times[k]
            )));
        }
        estimate_gyro_bias(&observations[..n], imu, &config.eskf)
    })?;

    let times = track.times[..n].to_vec();
    let mut window = None;
    let deltas = timed(Stage::Preintegration, &mut timings.preintegration, || {
        window = Some(KeyframeTrack::new(times.clone(), gyro.rotations.clone(), track.positions[..n].to_vec())?);
        preintegrate_keyframes(imu, &times, &gyro.gyro_bias, &Vec3::zeros())
    })?;
    let window = window.expect("window is built before preintegration");

    let linear = timed(Stage::LinearAlignment, &mut timings.linear, || solve_initial(&window, extrinsics, &deltas))?;
    let refined = timed(Stage::Refinement, &mut timings.refine, || {
        refine(&linear, &window, extrinsics, &deltas, &config.refine)
    })?;

    Ok(Solution {
        keyframe_times: times,
        gyro_bias: gyro.gyro_bias,
        rotations: gyro.rotations,
        linear,
        refined,
        timings,
    })
}

/// Closed-form estimate as stored in a solution file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRecord {
    pub velocities: Vec<[f64; 3]>,
    pub gravity: [f64; 3],
    pub scale: f64,
}

/// Serializable result of one run. Quaternions are `[qx, qy, qz, qw]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    /// Raw keyframe stamps, on the clock of the input files.
    pub keyframe_stamps_ns: Vec<i64>,
    /// Seconds since the first IMU sample.
    pub keyframe_times: Vec<f64>,
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    /// Body velocities in the world frame, m/s.
    pub velocities: Vec<[f64; 3]>,
    pub gravity: [f64; 3],
    pub scale: f64,
    pub w1: f64,
    pub w2: f64,
    pub linear: LinearRecord,
    /// Filter-corrected body orientations.
    pub body_rotations: Vec<[f64; 4]>,
    /// Corrected camera orientations.
    pub camera_rotations: Vec<[f64; 4]>,
    /// Metric camera positions, `s·p̄`.
    pub camera_positions: Vec<[f64; 3]>,
}

fn arrays(v: &[Vec3]) -> Vec<[f64; 3]> {
    v.iter().map(|x| (*x).into()).collect()
}

impl SolutionRecord {
    /// `track` is the full input track; `stamps_ns` its raw stamps.
    pub fn new(solution: &Solution, track: &KeyframeTrack, extrinsics: &Extrinsics, stamps_ns: &[i64]) -> Self {
        let n = solution.keyframe_times.len();
        let r = &solution.refined;
        Self {
            keyframe_stamps_ns: stamps_ns[..n].to_vec(),
            keyframe_times: solution.keyframe_times.clone(),
            gyro_bias: solution.gyro_bias.into(),
            accel_bias: r.accel_bias.into(),
            velocities: arrays(&r.velocities),
            gravity: r.gravity.into(),
            scale: r.scale,
            w1: r.w1,
            w2: r.w2,
            linear: LinearRecord {
                velocities: arrays(&solution.linear.velocities),
                gravity: solution.linear.gravity.into(),
                scale: solution.linear.scale,
            },
            body_rotations: solution.rotations.iter().map(quaternion_from_rotation).collect(),
            camera_rotations: solution
                .rotations
                .iter()
                .map(|b| quaternion_from_rotation(&extrinsics.camera_rotation(b)))
                .collect(),
            camera_positions: track.positions[..n].iter().map(|p| (r.scale * p).into()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.keyframe_stamps_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframe_stamps_ns.is_empty()
    }

    /// Checks lengths and decodes the orientations.
    pub fn validate(&self) -> crate::Result<()> {
        let n = self.len();
        let lens = [
            ("keyframe times", self.keyframe_times.len()),
            ("velocities", self.velocities.len()),
            ("linear velocities", self.linear.velocities.len()),
            ("body rotations", self.body_rotations.len()),
            ("camera rotations", self.camera_rotations.len()),
            ("camera positions", self.camera_positions.len()),
        ];
        if let Some(&(what, len)) = lens.iter().find(|(_, len)| *len != n) {
            return Err(Error::InvalidInput(format!("solution has {n} keyframe stamps but {len} {what}")));
        }
        self.camera_rotation_matrices().map(|_| ())
    }

    pub fn camera_rotation_matrices(&self) -> crate::Result<Vec<Rot3>> {
        self.camera_rotations.iter().map(|&q| rotation_from_quaternion(q)).collect()
    }

    pub fn camera_position_vectors(&self) -> Vec<Vec3> {
        self.camera_positions.iter().map(|&p| Vec3::from(p)).collect()
    }

    pub fn velocity_vectors(&self) -> Vec<Vec3> {
        self.velocities.iter().map(|&v| Vec3::from(v)).collect()
    }
}
