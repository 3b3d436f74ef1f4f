#![allow(dead_code)]

use viinit_core::eskf::estimate_gyro_bias;
use viinit_core::geometry::Vec3;
use viinit_core::linear_align::{solve_initial, KeyframeTrack, LinearSolution};
use viinit_core::pipeline::PipelineConfig;
use viinit_core::preintegration::{preintegrate_keyframes, PreintegratedDelta};
use viinit_core::simulate::{simulate, NoiseConfig, SimulatedDataset, SimulationConfig, TrajectoryConfig};

pub fn dataset(scale: f64, seed: u64, noise: NoiseConfig) -> SimulatedDataset {
    let cfg = SimulationConfig {
        trajectory: TrajectoryConfig { seed, ..Default::default() },
        noise,
        scale,
        ..Default::default()
    };
    simulate(&cfg).unwrap()
}

/// EuRoC-class IMU noise plus constant biases.
pub fn realistic_noise() -> NoiseConfig {
    NoiseConfig {
        gyro_noise_std: 1.7e-4,
        gyro_walk_std: 2e-5,
        accel_noise_std: 2e-3,
        bg_true: Vec3::new(0.01, -0.02, 0.015),
        ba_true: Vec3::new(0.05, -0.03, 0.02),
        ..NoiseConfig::zero()
    }
}

/// Output of the first two stages, as `refine` consumes it.
pub struct Stages {
    pub track: KeyframeTrack,
    pub deltas: Vec<PreintegratedDelta>,
    pub linear: LinearSolution,
}

pub fn first_stages(ds: &SimulatedDataset, config: &PipelineConfig) -> Stages {
    let kf = &ds.keyframes;
    let gyro = estimate_gyro_bias(&kf.observations, &ds.imu.samples, &config.eskf).unwrap();
    let track = kf.track.with_rotations(gyro.rotations).unwrap();
    let deltas = preintegrate_keyframes(&ds.imu.samples, &track.times, &gyro.gyro_bias, &Vec3::zeros()).unwrap();
    let linear = solve_initial(&track, &ds.config.extrinsics, &deltas).unwrap();
    Stages { track, deltas, linear }
}
