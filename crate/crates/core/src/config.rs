//! TOML configuration: pipeline parameters at the top level, plus optional
//! `[simulation]` and `[sweep]` tables.
//!
//! Every key has a default, so an empty file is valid. Unknown keys are
//! reported as warnings; values of the wrong type are errors. See
//! `config.example.toml` at the repository root for the annotated schema.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eskf::{initial_covariance, EskfConfig, EskfNoise};
use crate::geometry::{quaternion_from_rotation, rotation_from_quaternion, Vec3};
use crate::linear_align::Extrinsics;
use crate::pipeline::{PipelineConfig, DEFAULT_WINDOW_SIZE};
use crate::refine::{PcgOperator, RefineConfig, DEFAULT_GRAVITY, DEFAULT_IRLS_PASSES, DEFAULT_PCG_ITERATIONS};
use crate::simulate::{default_extrinsics, NoiseConfig, SimulationConfig, TrajectoryConfig};

/// Keys the schema does not know, kept only to report them.
pub type Extra = BTreeMap<String, toml::Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcgOperatorName {
    Full,
    BiasSchur,
}

impl From<PcgOperatorName> for PcgOperator {
    fn from(n: PcgOperatorName) -> Self {
        match n {
            PcgOperatorName::Full => PcgOperator::Full,
            PcgOperatorName::BiasSchur => PcgOperator::BiasSchur,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Gyroscope white noise, rad/s.
    pub gyro_noise: f64,
    /// Gyroscope bias random walk, rad/s/√s.
    pub gyro_walk: f64,
    /// Orientation observation standard deviation, rad (V = σ²·I).
    pub obs_noise: f64,
    /// Initial rotation error variance, rad².
    pub initial_cov_rotation: f64,
    /// Initial gyroscope-bias variance, (rad/s)².
    pub initial_cov_gyro_bias: f64,
    pub gravity_magnitude: f64,
    pub pcg_iterations: usize,
    pub pcg_operator: PcgOperatorName,
    pub irls_passes: usize,
    pub accel_bias_damping: f64,
    pub window_size: usize,
    /// Keyframe selection rate for dense trajectory files, Hz. Zero keeps
    /// every pose.
    pub keyframe_rate: f64,
    /// Seconds after the first IMU sample where the keyframe window starts.
    pub start_time: f64,
    pub rotation_offset_removal: bool,
    /// Camera-to-body rotation as `[qx, qy, qz, qw]`.
    pub extrinsic_rotation: [f64; 4],
    /// Camera origin in the body frame, m.
    pub extrinsic_translation: [f64; 3],
    pub simulation: SimulationSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(flatten, skip_serializing)]
    pub unknown: Extra,
}

impl Default for Config {
    fn default() -> Self {
        let ext = default_extrinsics();
        Self {
            gyro_noise: 1.7e-4,
            gyro_walk: 2e-5,
            obs_noise: 1e-3,
            initial_cov_rotation: 1e-4,
            initial_cov_gyro_bias: 1e-2,
            gravity_magnitude: DEFAULT_GRAVITY,
            pcg_iterations: DEFAULT_PCG_ITERATIONS,
            pcg_operator: PcgOperatorName::BiasSchur,
            irls_passes: DEFAULT_IRLS_PASSES,
            accel_bias_damping: 0.0,
            window_size: DEFAULT_WINDOW_SIZE,
            keyframe_rate: 0.0,
            start_time: 0.0,
            rotation_offset_removal: true,
            extrinsic_rotation: quaternion_from_rotation(&ext.rotation),
            extrinsic_translation: ext.translation.into(),
            simulation: SimulationSection::default(),
            sweep: None,
            unknown: Extra::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSection {
    pub duration: f64,
    pub imu_rate: f64,
    pub keyframe_rate: f64,
    pub position_amplitudes: [f64; 3],
    pub position_frequencies: [f64; 3],
    pub angular_rate_amplitudes: [f64; 3],
    pub angular_rate_frequencies: [f64; 3],
    pub seed: u64,
    /// True scale dividing the emitted camera positions.
    pub scale: f64,
    pub gyro_noise_std: f64,
    pub gyro_walk_std: f64,
    pub accel_noise_std: f64,
    pub accel_walk_std: f64,
    pub bg_true: [f64; 3],
    pub ba_true: [f64; 3],
    pub rot_obs_noise_std: f64,
    #[serde(flatten, skip_serializing)]
    pub unknown: Extra,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let t = TrajectoryConfig::default();
        let n = NoiseConfig::zero();
        Self {
            duration: t.duration,
            imu_rate: t.imu_rate,
            keyframe_rate: t.keyframe_rate,
            position_amplitudes: t.position_amplitudes.into(),
            position_frequencies: t.position_frequencies.into(),
            angular_rate_amplitudes: t.angular_rate_amplitudes.into(),
            angular_rate_frequencies: t.angular_rate_frequencies.into(),
            seed: t.seed,
            scale: 1.0,
            gyro_noise_std: n.gyro_noise_std,
            gyro_walk_std: n.gyro_walk_std,
            accel_noise_std: n.accel_noise_std,
            accel_walk_std: n.accel_walk_std,
            bg_true: n.bg_true.into(),
            ba_true: n.ba_true.into(),
            rot_obs_noise_std: n.rot_obs_noise_std,
            unknown: Extra::new(),
        }
    }
}

/// Cross-product experiment grid. Empty axes keep the base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub seed_count: u64,
    #[serde(default = "default_seed_start")]
    pub seed_start: u64,
    #[serde(default)]
    pub rot_noise: Vec<f64>,
    #[serde(default)]
    pub window_size: Vec<usize>,
    #[serde(default)]
    pub accel_noise: Vec<f64>,
    #[serde(flatten, skip_serializing)]
    pub unknown: Extra,
}

fn default_seed_start() -> u64 {
    1
}

impl SweepSection {
    pub fn new(seed_start: u64, seed_count: u64) -> Self {
        Self { seed_count, seed_start, rot_noise: vec![], window_size: vec![], accel_noise: vec![], unknown: Extra::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed_count == 0 {
            return Err(Error::Config("sweep.seed_count must be positive".into()));
        }
        if self.rot_noise.iter().chain(&self.accel_noise).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("sweep noise levels must be finite and non-negative".into()));
        }
        if self.window_size.iter().any(|&n| n < crate::linear_align::MIN_KEYFRAMES) {
            return Err(Error::Config(format!(
                "sweep.window_size entries must be at least {}",
                crate::linear_align::MIN_KEYFRAMES
            )));
        }
        Ok(())
    }
}

impl Config {
    /// Parses TOML text, returning the configuration and any warnings.
    pub fn parse(text: &str) -> Result<(Self, Vec<String>)> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut warnings: Vec<String> = cfg.unknown.keys().map(|k| format!("unknown key `{k}`")).collect();
        warnings.extend(cfg.simulation.unknown.keys().map(|k| format!("unknown key `simulation.{k}`")));
        if let Some(sweep) = &cfg.sweep {
            warnings.extend(sweep.unknown.keys().map(|k| format!("unknown key `sweep.{k}`")));
        }
        cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gyro_noise", self.gyro_noise),
            ("gyro_walk", self.gyro_walk),
            ("obs_noise", self.obs_noise),
            ("initial_cov_rotation", self.initial_cov_rotation),
            ("initial_cov_gyro_bias", self.initial_cov_gyro_bias),
            ("gravity_magnitude", self.gravity_magnitude),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("`{key}` must be positive, got {v}")));
            }
        }
        if self.irls_passes == 0 {
            return Err(Error::Config("`irls_passes` must be at least 1".into()));
        }
        if self.window_size < crate::linear_align::MIN_KEYFRAMES {
            return Err(Error::Config(format!(
                "`window_size` must be at least {}",
                crate::linear_align::MIN_KEYFRAMES
            )));
        }
        if !(self.accel_bias_damping.is_finite() && self.accel_bias_damping >= 0.0) {
            return Err(Error::Config("`accel_bias_damping` must be non-negative".into()));
        }
        if !(self.keyframe_rate.is_finite() && self.keyframe_rate >= 0.0) || !self.start_time.is_finite() {
            return Err(Error::Config("`keyframe_rate` and `start_time` must be finite, rate non-negative".into()));
        }
        self.extrinsics()?;
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        Ok(())
    }

    pub fn extrinsics(&self) -> Result<Extrinsics> {
        let rotation = rotation_from_quaternion(self.extrinsic_rotation)
            .map_err(|e| Error::Config(format!("`extrinsic_rotation`: {e}")))?;
        Ok(Extrinsics { rotation, translation: Vec3::from(self.extrinsic_translation) })
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            eskf: EskfConfig {
                noise: EskfNoise { sigma_wn: self.gyro_noise, sigma_ww: self.gyro_walk, ..EskfNoise::default() }
                    .with_obs_sigma(self.obs_noise),
                initial_cov: initial_covariance(self.initial_cov_rotation, self.initial_cov_gyro_bias),
            },
            refine: RefineConfig {
                pcg_iterations: self.pcg_iterations,
                irls_passes: self.irls_passes,
                gravity_magnitude: self.gravity_magnitude,
                ba_damping: self.accel_bias_damping,
                pcg_operator: self.pcg_operator.into(),
            },
            window_size: self.window_size,
        }
    }

    pub fn simulation(&self) -> Result<SimulationConfig> {
        let s = &self.simulation;
        let trajectory = TrajectoryConfig {
            duration: s.duration,
            imu_rate: s.imu_rate,
            keyframe_rate: s.keyframe_rate,
            position_amplitudes: s.position_amplitudes.into(),
            position_frequencies: s.position_frequencies.into(),
            angular_rate_amplitudes: s.angular_rate_amplitudes.into(),
            angular_rate_frequencies: s.angular_rate_frequencies.into(),
            seed: s.seed,
        };
        let noise = NoiseConfig {
            gyro_noise_std: s.gyro_noise_std,
            gyro_walk_std: s.gyro_walk_std,
            accel_noise_std: s.accel_noise_std,
            accel_walk_std: s.accel_walk_std,
            bg_true: s.bg_true.into(),
            ba_true: s.ba_true.into(),
            rot_obs_noise_std: s.rot_obs_noise_std,
        };
        trajectory.validate()?;
        noise.validate()?;
        if !(s.scale.is_finite() && s.scale > 0.0) {
            return Err(Error::Config(format!("`simulation.scale` must be positive, got {}", s.scale)));
        }
        Ok(SimulationConfig { trajectory, noise, scale: s.scale, extrinsics: self.extrinsics()? })
    }
}

/// Reads a configuration file, logging and returning warnings.
pub fn load_config(path: &Path) -> Result<(Config, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (cfg, warnings) = Config::parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok((cfg, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let (cfg, warnings) = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        assert!(warnings.is_empty());
        assert_eq!(cfg.gyro_noise, 1.7e-4);
        assert_eq!(cfg.gyro_walk, 2e-5);
        assert_eq!(cfg.gravity_magnitude, 9.81);
        assert_eq!(cfg.window_size, 10);
    }

    #[test]
    fn integer_pcg_iterations() {
        let (cfg, _) = Config::parse("pcg_iterations = 4").unwrap();
        assert_eq!(cfg.pcg_iterations, 4);
        assert_eq!(cfg.pipeline().refine.pcg_iterations, 4);
    }

    #[test]
    fn gravity_magnitude_reaches_refine() {
        let (cfg, _) = Config::parse("gravity_magnitude = 9.80665").unwrap();
        assert_eq!(cfg.pipeline().refine.gravity_magnitude, 9.80665);
    }

    #[test]
    fn unknown_keys_warn() {
        let (_, warnings) = Config::parse("pcg_iterationz = 4\n[simulation]\nsede = 3\n").unwrap();
        assert_eq!(warnings, vec!["unknown key `pcg_iterationz`", "unknown key `simulation.sede`"]);
    }

    #[test]
    fn type_mismatch_is_an_error() {
        assert!(matches!(Config::parse("pcg_iterations = \"four\""), Err(Error::Config(_))));
        assert!(matches!(Config::parse("window_size = 2.5"), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_requires_seed_count() {
        let err = Config::parse("[sweep]\nrot_noise = [0.0, 0.1]\n").unwrap_err();
        assert!(err.to_string().contains("seed_count"), "{err}");
        let (cfg, _) = Config::parse("[sweep]\nseed_count = 20\nrot_noise = [0.0, 0.1]\n").unwrap();
        let sweep = cfg.sweep.unwrap();
        assert_eq!((sweep.seed_start, sweep.seed_count), (1, 20));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::parse("irls_passes = 0").is_err());
        assert!(Config::parse("obs_noise = -1.0").is_err());
        assert!(Config::parse("extrinsic_rotation = [0.0, 0.0, 0.0, 2.0]").is_err());
        assert!(Config::parse("pcg_operator = \"lu\"").is_err());
    }

    #[test]
    fn serialize_parse_fixed_point() {
        let text = "obs_noise = 0.1\npcg_operator = \"full\"\n[simulation]\nseed = 9\nba_true = [0.05, -0.03, 0.02]\n[sweep]\nseed_count = 3\nwindow_size = [6, 10]\n";
        let (cfg, _) = Config::parse(text).unwrap();
        let again = cfg.to_toml();
        let (cfg2, warnings) = Config::parse(&again).unwrap();
        assert_eq!(cfg, cfg2);
        assert!(warnings.is_empty());
        assert_eq!(cfg2.to_toml(), again);
    }

    #[test]
    fn default_extrinsics_round_trip() {
        let ext = Config::default().extrinsics().unwrap();
        let expected = default_extrinsics();
        assert!((ext.rotation.matrix() - expected.rotation.matrix()).abs().max() < 1e-12);
        assert_eq!(ext.translation, expected.translation);
    }
}
