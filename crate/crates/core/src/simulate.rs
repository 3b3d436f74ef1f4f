//! Synthetic ground truth, IMU streams and keyframe tracks.
//!
//! Positions and body angular rates are per-axis sinusoids with seeded
//! phases. The discrete ground-truth states are propagated with the same
//! midpoint rule the preintegrator uses, so noise-free measurements reproduce
//! the keyframe states exactly up to rounding.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::eskf::OrientationObservation;
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, Rot3, Vec3};
use crate::linear_align::{Extrinsics, KeyframeTrack};
use crate::preintegration::ImuSample;

pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

const IMU_STREAM: u64 = 1;
const KEYFRAME_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryConfig {
    pub duration: f64,
    pub imu_rate: f64,
    pub keyframe_rate: f64,
    pub position_amplitudes: Vec3,
    pub position_frequencies: Vec3,
    pub angular_rate_amplitudes: Vec3,
    pub angular_rate_frequencies: Vec3,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            duration: 1.0,
            imu_rate: 200.0,
            keyframe_rate: 10.0,
            position_amplitudes: Vec3::new(0.4, 0.3, 0.2),
            position_frequencies: Vec3::new(0.8, 1.1, 0.6),
            angular_rate_amplitudes: Vec3::new(0.6, 0.5, 0.8),
            angular_rate_frequencies: Vec3::new(0.5, 0.7, 0.4),
            seed: 1,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.duration) || !positive(self.imu_rate) || !positive(self.keyframe_rate) {
            return Err(Error::InvalidInput("duration and rates must be positive".into()));
        }
        if self.imu_rate < 10.0 * self.keyframe_rate {
            return Err(Error::InvalidInput(format!(
                "imu rate {} Hz must be at least 10x the keyframe rate {} Hz",
                self.imu_rate, self.keyframe_rate
            )));
        }
        let vectors = [
            self.position_amplitudes,
            self.position_frequencies,
            self.angular_rate_amplitudes,
            self.angular_rate_frequencies,
        ];
        if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("trajectory amplitudes and frequencies must be finite".into()));
        }
        Ok(())
    }

    /// IMU sample period rounded to whole nanoseconds.
    pub fn period_ns(&self) -> u64 {
        (1e9 / self.imu_rate).round() as u64
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * self.imu_rate + 1e-9).floor() as usize + 1
    }

    pub fn keyframe_stride(&self) -> usize {
        (self.imu_rate / self.keyframe_rate).round() as usize
    }

    pub fn keyframe_count(&self) -> usize {
        (self.duration * self.keyframe_rate + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Per-sample gyroscope white noise, rad/s.
    pub gyro_noise_std: f64,
    /// Gyroscope bias random walk, rad/s/√s.
    pub gyro_walk_std: f64,
    /// Per-sample accelerometer white noise, m/s².
    pub accel_noise_std: f64,
    /// Accelerometer bias random walk, m/s²/√s.
    pub accel_walk_std: f64,
    pub bg_true: Vec3,
    pub ba_true: Vec3,
    /// Per-axis orientation observation noise, rad.
    pub rot_obs_noise_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::zero()
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            gyro_noise_std: 0.0,
            gyro_walk_std: 0.0,
            accel_noise_std: 0.0,
            accel_walk_std: 0.0,
            bg_true: Vec3::zeros(),
            ba_true: Vec3::zeros(),
            rot_obs_noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [
            self.gyro_noise_std,
            self.gyro_walk_std,
            self.accel_noise_std,
            self.accel_walk_std,
            self.rot_obs_noise_std,
        ];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidInput("noise standard deviations must be finite and non-negative".into()));
        }
        if self.bg_true.iter().chain(self.ba_true.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("bias values must be finite".into()));
        }
        Ok(())
    }
}

/// Continuous sinusoidal motion with closed-form derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pos_amp: Vec3,
    pos_omega: Vec3,
    pos_phase: Vec3,
    rate_amp: Vec3,
    rate_omega: Vec3,
    rate_phase: Vec3,
}

impl Trajectory {
    pub fn new(cfg: &TrajectoryConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut phases = || Vec3::from_fn(|_, _| rng.random_range(0.0..TAU));
        Self {
            pos_amp: cfg.position_amplitudes,
            pos_omega: cfg.position_frequencies * TAU,
            pos_phase: phases(),
            rate_amp: cfg.angular_rate_amplitudes,
            rate_omega: cfg.angular_rate_frequencies * TAU,
            rate_phase: phases(),
        }
    }

    fn axes(amp: &Vec3, omega: &Vec3, phase: &Vec3, t: f64, f: impl Fn(f64, f64, f64) -> f64) -> Vec3 {
        Vec3::from_fn(|i, _| f(amp[i], omega[i], omega[i] * t + phase[i]))
    }

    pub fn position(&self, t: f64) -> Vec3 {
        Self::axes(&self.pos_amp, &self.pos_omega, &self.pos_phase, t, |a, _, x| a * x.sin())
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        Self::axes(&self.pos_amp, &self.pos_omega, &self.pos_phase, t, |a, w, x| a * w * x.cos())
    }

    pub fn acceleration(&self, t: f64) -> Vec3 {
        Self::axes(&self.pos_amp, &self.pos_omega, &self.pos_phase, t, |a, w, x| -a * w * w * x.sin())
    }

    /// Body-frame angular rate.
    pub fn angular_rate(&self, t: f64) -> Vec3 {
        Self::axes(&self.rate_amp, &self.rate_omega, &self.rate_phase, t, |a, _, x| a * x.sin())
    }
}

/// Discrete ground-truth states at every IMU timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub times: Vec<f64>,
    /// Body-to-world rotations.
    pub rotations: Vec<Rot3>,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    /// True world acceleration and body angular rate used for each sample.
    pub accelerations: Vec<Vec3>,
    pub angular_rates: Vec<Vec3>,
    pub gravity: Vec3,
    pub keyframe_indices: Vec<usize>,
    pub trajectory: Trajectory,
}

impl GroundTruth {
    pub fn keyframe_times(&self) -> Vec<f64> {
        self.keyframe_indices.iter().map(|&i| self.times[i]).collect()
    }

    pub fn keyframe_rotations(&self) -> Vec<Rot3> {
        self.keyframe_indices.iter().map(|&i| self.rotations[i]).collect()
    }

    pub fn keyframe_positions(&self) -> Vec<Vec3> {
        self.keyframe_indices.iter().map(|&i| self.positions[i]).collect()
    }

    pub fn keyframe_velocities(&self) -> Vec<Vec3> {
        self.keyframe_indices.iter().map(|&i| self.velocities[i]).collect()
    }
}

pub fn gen_trajectory(cfg: &TrajectoryConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let trajectory = Trajectory::new(cfg);
    let count = cfg.sample_count();
    let period = cfg.period_ns();
    let times: Vec<f64> = (0..count as u64).map(|i| (i * period) as f64 * 1e-9).collect();
    let accelerations: Vec<Vec3> = times.iter().map(|&t| trajectory.acceleration(t)).collect();
    let angular_rates: Vec<Vec3> = times.iter().map(|&t| trajectory.angular_rate(t)).collect();

    let mut rotations = Vec::with_capacity(count);
    let mut positions = Vec::with_capacity(count);
    let mut velocities = Vec::with_capacity(count);
    let (mut r, mut p, mut v) = (Rot3::identity(), trajectory.position(0.0), trajectory.velocity(0.0));
    for i in 0..count {
        rotations.push(r);
        positions.push(p);
        velocities.push(v);
        if i + 1 < count {
            let h = times[i + 1] - times[i];
            let acc = 0.5 * (accelerations[i] + accelerations[i + 1]);
            r *= exp_so3(&(0.5 * (angular_rates[i] + angular_rates[i + 1]) * h));
            p += v * h + 0.5 * acc * h * h;
            v += acc * h;
        }
    }

    let stride = cfg.keyframe_stride();
    let keyframe_indices = (0..cfg.keyframe_count()).map(|k| k * stride).filter(|&i| i < count).collect();
    Ok(GroundTruth {
        times,
        rotations,
        positions,
        velocities,
        accelerations,
        angular_rates,
        gravity: GRAVITY,
        keyframe_indices,
        trajectory,
    })
}

/// Measured stream plus the bias actually applied to each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
    pub gyro_bias: Vec<Vec3>,
    pub accel_bias: Vec<Vec3>,
}

fn gaussian3(rng: &mut ChaCha8Rng, std: f64) -> Vec3 {
    if std == 0.0 {
        return Vec3::zeros();
    }
    Vec3::from_fn(|_, _| std * rng.sample::<f64, _>(StandardNormal))
}

pub fn gen_imu(gt: &GroundTruth, noise: &NoiseConfig, seed: u64) -> Result<ImuStream> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(IMU_STREAM);
    let count = gt.times.len();
    let mut samples = Vec::with_capacity(count);
    let mut gyro_bias = Vec::with_capacity(count);
    let mut accel_bias = Vec::with_capacity(count);
    let (mut bg, mut ba) = (noise.bg_true, noise.ba_true);
    for i in 0..count {
        let r_bw = gt.rotations[i].inverse();
        let gyro = gt.angular_rates[i] + bg + gaussian3(&mut rng, noise.gyro_noise_std);
        let accel = r_bw * (gt.accelerations[i] - gt.gravity) + ba + gaussian3(&mut rng, noise.accel_noise_std);
        samples.push(ImuSample::new(gt.times[i], gyro, accel));
        gyro_bias.push(bg);
        accel_bias.push(ba);
        if i + 1 < count {
            let sqrt_h = (gt.times[i + 1] - gt.times[i]).sqrt();
            bg += gaussian3(&mut rng, noise.gyro_walk_std * sqrt_h);
            ba += gaussian3(&mut rng, noise.accel_walk_std * sqrt_h);
        }
    }
    Ok(ImuStream { samples, gyro_bias, accel_bias })
}

/// Up-to-scale keyframes as a monocular front end would report them.
#[derive(Debug, Clone, PartialEq)]
pub struct SimKeyframes {
    /// Observed body rotations and up-to-scale camera positions.
    pub track: KeyframeTrack,
    pub observations: Vec<OrientationObservation>,
    /// Observed camera-to-world rotations.
    pub camera_rotations: Vec<Rot3>,
}

pub fn gen_keyframes(
    gt: &GroundTruth,
    s_true: f64,
    noise: &NoiseConfig,
    extrinsics: &Extrinsics,
    seed: u64,
) -> Result<SimKeyframes> {
    if !(s_true.is_finite() && s_true > 0.0) {
        return Err(Error::InvalidInput(format!("scale {s_true} must be positive")));
    }
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(KEYFRAME_STREAM);
    let times = gt.keyframe_times();
    let mut positions = Vec::with_capacity(times.len());
    let mut rotations = Vec::with_capacity(times.len());
    for &i in &gt.keyframe_indices {
        let r_wb = gt.rotations[i];
        positions.push((gt.positions[i] + r_wb * extrinsics.translation) / s_true);
        rotations.push(r_wb * exp_so3(&gaussian3(&mut rng, noise.rot_obs_noise_std)));
    }
    let observations = times
        .iter()
        .zip(&rotations)
        .map(|(&t, &rotation)| OrientationObservation { t, rotation })
        .collect();
    let camera_rotations = rotations.iter().map(|r| extrinsics.camera_rotation(r)).collect();
    Ok(SimKeyframes { track: KeyframeTrack::new(times, rotations, positions)?, observations, camera_rotations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseConfig,
    pub scale: f64,
    pub extrinsics: Extrinsics,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryConfig::default(),
            noise: NoiseConfig::zero(),
            scale: 1.0,
            extrinsics: default_extrinsics(),
        }
    }
}

/// A camera mounted sideways with a few centimetres of lever arm.
pub fn default_extrinsics() -> Extrinsics {
    Extrinsics {
        rotation: exp_so3(&Vec3::new(0.02, -0.01, std::f64::consts::FRAC_PI_2)),
        translation: Vec3::new(0.05, -0.02, 0.01),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub config: SimulationConfig,
    pub ground_truth: GroundTruth,
    pub imu: ImuStream,
    pub keyframes: SimKeyframes,
}

impl SimulatedDataset {
    /// Gyroscope bias at the last keyframe, the value a window estimate targets.
    pub fn final_gyro_bias(&self) -> Vec3 {
        self.bias_at_last_keyframe(&self.imu.gyro_bias)
    }

    /// Mean accelerometer bias over the keyframe window.
    pub fn mean_accel_bias(&self) -> Vec3 {
        let idx = &self.ground_truth.keyframe_indices;
        let (first, last) = (idx[0], idx[idx.len() - 1]);
        let span = &self.imu.accel_bias[first..=last];
        span.iter().sum::<Vec3>() / span.len() as f64
    }

    fn bias_at_last_keyframe(&self, biases: &[Vec3]) -> Vec3 {
        let last = *self.ground_truth.keyframe_indices.last().expect("keyframes are non-empty");
        biases[last]
    }
}

pub fn simulate(config: &SimulationConfig) -> Result<SimulatedDataset> {
    let seed = config.trajectory.seed;
    let ground_truth = gen_trajectory(&config.trajectory)?;
    if ground_truth.keyframe_indices.len() < 2 {
        return Err(Error::InvalidInput("simulation yields fewer than two keyframes".into()));
    }
    let imu = gen_imu(&ground_truth, &config.noise, seed)?;
    let keyframes = gen_keyframes(&ground_truth, config.scale, &config.noise, &config.extrinsics, seed)?;
    Ok(SimulatedDataset { config: config.clone(), ground_truth, imu, keyframes })
}
