//! Error-state Kalman filter over orientation and gyroscope bias.
//!
//! The nominal state integrates raw gyroscope readings; the six-dimensional
//! error state `[δθ; δb_g]` carries the uncertainty. External orientation
//! observations correct it, the posterior error is injected into the nominal
//! state (`R ← R·Exp(δθ)`, `b_g ← b_g + δb_g`) and the error mean is reset to
//! zero. The covariance is kept as-is at reset (identity reset Jacobian).

use nalgebra::{Matrix3x6, Matrix6, Matrix6x3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, log_so3, right_jacobian_inv, Mat3, Rot3, Vec3};
use crate::preintegration::{check_gaps, slice_interval, validate_stream, ImuSample};

/// Largest innovation-covariance condition number accepted by [`update`].
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct EskfNominal {
    /// Body-to-world orientation.
    pub rotation: Rot3,
    pub gyro_bias: Vec3,
}

impl EskfNominal {
    pub fn new(rotation: Rot3) -> Self {
        Self { rotation, gyro_bias: Vec3::zeros() }
    }
}

/// Error-state mean and covariance, ordered `[δθ; δb_g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EskfError {
    pub dtheta: Vec3,
    pub dbg: Vec3,
    pub cov: Matrix6<f64>,
}

impl EskfError {
    pub fn reset(cov: Matrix6<f64>) -> Self {
        Self { dtheta: Vec3::zeros(), dbg: Vec3::zeros(), cov }
    }

    fn is_reset(&self) -> bool {
        self.dtheta == Vec3::zeros() && self.dbg == Vec3::zeros()
    }
}

/// Process and observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EskfNoise {
    /// Gyroscope white noise σ_wn (rad/s), enters as σ²·Δt² per step.
    pub sigma_wn: f64,
    /// Gyroscope bias random walk σ_ww (rad/s/√s), enters as σ²·Δt per step.
    pub sigma_ww: f64,
    /// Orientation observation covariance V (rad²).
    pub obs_cov: Mat3,
}

impl Default for EskfNoise {
    fn default() -> Self {
        Self { sigma_wn: 1.7e-4, sigma_ww: 2e-5, obs_cov: Mat3::identity() * 1e-6 }
    }
}

impl EskfNoise {
    /// Isotropic observation noise with standard deviation `sigma` radians.
    pub fn with_obs_sigma(mut self, sigma: f64) -> Self {
        self.obs_cov = Mat3::identity() * (sigma * sigma);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_wn > 0.0 && self.sigma_ww > 0.0) {
            return Err(Error::InvalidInput("gyro noise parameters must be positive".into()));
        }
        let sym = (self.obs_cov - self.obs_cov.transpose()).abs().max();
        let min_eig = SymmetricEigen::new(self.obs_cov).eigenvalues.min();
        if sym > 1e-12 || min_eig.is_nan() || min_eig <= 0.0 {
            return Err(Error::InvalidInput("observation covariance must be symmetric positive definite".into()));
        }
        Ok(())
    }
}

/// Body orientation reported by the external pose source at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationObservation {
    pub t: f64,
    pub rotation: Rot3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EskfConfig {
    pub noise: EskfNoise,
    pub initial_cov: Matrix6<f64>,
}

impl Default for EskfConfig {
    fn default() -> Self {
        Self { noise: EskfNoise::default(), initial_cov: initial_covariance(1e-4, 1e-2) }
    }
}

/// Block-diagonal prior covariance `diag(rot·I₃, bias·I₃)`.
pub fn initial_covariance(rot: f64, bias: f64) -> Matrix6<f64> {
    let mut p = Matrix6::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).fill_diagonal(rot);
    p.fixed_view_mut::<3, 3>(3, 3).fill_diagonal(bias);
    p
}

fn symmetrize(p: &Matrix6<f64>) -> Matrix6<f64> {
    (p + p.transpose()) * 0.5
}

/// Error-state transition for one gyroscope step of length `h` with bias-free rate `omega`.
pub fn transition(omega: &Vec3, h: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(exp_so3(&(-omega * h)).matrix());
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Mat3::identity() * h));
    f
}

fn process_noise(noise: &EskfNoise, h: f64) -> Matrix6<f64> {
    initial_covariance(noise.sigma_wn.powi(2) * h * h, noise.sigma_ww.powi(2) * h)
}

/// Propagates the nominal state and error covariance across a gyroscope
/// segment, composing one transition per pair of consecutive samples.
pub fn predict(
    nominal: &EskfNominal,
    err: &EskfError,
    noise: &EskfNoise,
    segment: &[ImuSample],
) -> Result<(EskfNominal, EskfError)> {
    if segment.len() < 2 {
        return Err(Error::TooFewSamples { required: 2, got: segment.len() });
    }
    if !err.is_reset() {
        return Err(Error::InvalidInput("prediction requires a reset error state".into()));
    }
    validate_stream(segment)?;

    let mut rotation = nominal.rotation;
    let mut cov = err.cov;
    for w in segment.windows(2) {
        let h = w[1].t - w[0].t;
        let omega = (w[0].gyro + w[1].gyro) * 0.5 - nominal.gyro_bias;
        rotation *= exp_so3(&(omega * h));
        let f = transition(&omega, h);
        cov = symmetrize(&(f * cov * f.transpose() + process_noise(noise, h)));
    }
    Ok((
        EskfNominal { rotation, gyro_bias: nominal.gyro_bias },
        EskfError::reset(cov),
    ))
}

/// Fuses one orientation observation, injects the posterior error into the
/// nominal state and resets the error mean.
pub fn update(
    nominal: &EskfNominal,
    err: &EskfError,
    noise: &EskfNoise,
    obs: &OrientationObservation,
) -> Result<(EskfNominal, EskfError)> {
    if !err.is_reset() {
        return Err(Error::InvalidInput("update requires a reset error state".into()));
    }
    let innovation = log_so3(&(nominal.rotation.transpose() * obs.rotation))?;

    let mut h = Matrix3x6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&right_jacobian_inv(&innovation));
    let p = err.cov;
    let s = h * p * h.transpose() + noise.obs_cov;
    let s = (s + s.transpose()) * 0.5;

    let eig = SymmetricEigen::new(s).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !cond.is_finite() || cond > MAX_INNOVATION_CONDITION {
        return Err(Error::SingularInnovation { cond });
    }
    let s_inv = s.try_inverse().ok_or(Error::SingularInnovation { cond })?;

    let k: Matrix6x3<f64> = p * h.transpose() * s_inv;
    let dx = k * innovation;
    let cov = symmetrize(&((Matrix6::identity() - k * h) * p));

    let dtheta = dx.fixed_rows::<3>(0).into_owned();
    let dbg = dx.fixed_rows::<3>(3).into_owned();
    Ok((
        EskfNominal {
            rotation: nominal.rotation * exp_so3(&dtheta),
            gyro_bias: nominal.gyro_bias + dbg,
        },
        EskfError::reset(cov),
    ))
}

/// Sequential filter wrapping [`predict`] and [`update`].
#[derive(Debug, Clone)]
pub struct GyroBiasFilter {
    pub nominal: EskfNominal,
    pub error: EskfError,
    pub noise: EskfNoise,
}

impl GyroBiasFilter {
    pub fn new(initial_rotation: Rot3, config: &EskfConfig) -> Result<Self> {
        config.noise.validate()?;
        Ok(Self {
            nominal: EskfNominal::new(initial_rotation),
            error: EskfError::reset(config.initial_cov),
            noise: config.noise.clone(),
        })
    }

    pub fn predict(&mut self, segment: &[ImuSample]) -> Result<()> {
        (self.nominal, self.error) = predict(&self.nominal, &self.error, &self.noise, segment)?;
        Ok(())
    }

    pub fn update(&mut self, obs: &OrientationObservation) -> Result<()> {
        (self.nominal, self.error) = update(&self.nominal, &self.error, &self.noise, obs)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GyroBiasEstimate {
    /// Bias after the last keyframe update.
    pub gyro_bias: Vec3,
    /// Post-injection orientation at every keyframe.
    pub rotations: Vec<Rot3>,
    pub covariance: Matrix6<f64>,
}

/// Runs the filter over a keyframe window: the nominal orientation starts at
/// the first observation with zero bias, then alternates prediction through
/// the IMU samples between keyframes and an update at each keyframe.
pub fn estimate_gyro_bias(
    observations: &[OrientationObservation],
    imu: &[ImuSample],
    config: &EskfConfig,
) -> Result<GyroBiasEstimate> {
    if observations.len() < 2 {
        return Err(Error::TooFewKeyframes { required: 2, got: observations.len() });
    }
    let t0 = observations[0].t;
    let t_end = observations[observations.len() - 1].t;
    check_gaps(imu, t0, t_end)?;

    let mut filter = GyroBiasFilter::new(observations[0].rotation, config)?;
    let mut rotations = Vec::with_capacity(observations.len());
    rotations.push(filter.nominal.rotation);
    for pair in observations.windows(2) {
        let segment = slice_interval(imu, pair[0].t, pair[1].t)?;
        filter.predict(&segment)?;
        filter.update(&pair[1])?;
        rotations.push(filter.nominal.rotation);
    }
    Ok(GyroBiasEstimate {
        gyro_bias: filter.nominal.gyro_bias,
        rotations,
        covariance: filter.error.cov,
    })
}
