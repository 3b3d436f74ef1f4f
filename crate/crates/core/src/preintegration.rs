//! IMU preintegration between keyframes.
//!
//! Samples are integrated with the midpoint rule: the angular rate over a step
//! is the mean of its two endpoint samples, and the specific force is the mean
//! of both endpoint samples rotated into the start-of-interval frame. The
//! increments are linear in the accelerometer bias, so the bias Jacobians
//! accumulated here are exact for this scheme.

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, Mat3, Rot3, Vec3};

/// Timestamps closer than this are treated as equal when slicing streams.
pub const TIME_EPSILON: f64 = 1e-9;

/// One raw IMU reading: time in seconds, gyroscope in rad/s, accelerometer
/// specific force in m/s².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vec3, accel: Vec3) -> Self {
        Self { t, gyro, accel }
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite() && self.gyro.iter().all(|v| v.is_finite()) && self.accel.iter().all(|v| v.is_finite())
    }

    /// Linear interpolation between two samples at time `t`.
    pub fn lerp(&self, other: &ImuSample, t: f64) -> ImuSample {
        let span = other.t - self.t;
        let u = if span > 0.0 { (t - self.t) / span } else { 0.0 };
        ImuSample {
            t,
            gyro: self.gyro + (other.gyro - self.gyro) * u,
            accel: self.accel + (other.accel - self.accel) * u,
        }
    }
}

/// Relative motion between two keyframes, expressed in the body frame of the
/// first one.
#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedDelta {
    pub dp: Vec3,
    pub dv: Vec3,
    pub dr: Rot3,
    pub dt: f64,
    /// ∂Δp/∂b_a
    pub j_dp_dba: Mat3,
    /// ∂Δv/∂b_a
    pub j_dv_dba: Mat3,
    pub bg_used: Vec3,
    pub ba_used: Vec3,
}

impl PreintegratedDelta {
    /// Identity increment (zero duration).
    pub fn identity(bg: Vec3, ba: Vec3) -> Self {
        Self {
            dp: Vec3::zeros(),
            dv: Vec3::zeros(),
            dr: Rot3::identity(),
            dt: 0.0,
            j_dp_dba: Mat3::zeros(),
            j_dv_dba: Mat3::zeros(),
            bg_used: bg,
            ba_used: ba,
        }
    }

    /// Appends `next`, which must start where `self` ends and share its biases.
    pub fn compose(&self, next: &PreintegratedDelta) -> Result<PreintegratedDelta> {
        if self.bg_used != next.bg_used || self.ba_used != next.ba_used {
            return Err(Error::InvalidInput("cannot compose increments integrated at different biases".into()));
        }
        let r = self.dr.matrix();
        Ok(PreintegratedDelta {
            dp: self.dp + self.dv * next.dt + r * next.dp,
            dv: self.dv + r * next.dv,
            dr: self.dr * next.dr,
            dt: self.dt + next.dt,
            j_dp_dba: self.j_dp_dba + self.j_dv_dba * next.dt + r * next.j_dp_dba,
            j_dv_dba: self.j_dv_dba + r * next.j_dv_dba,
            bg_used: self.bg_used,
            ba_used: self.ba_used,
        })
    }

    /// First-order prediction of Δp and Δv at a different accelerometer bias.
    pub fn corrected_for_accel_bias(&self, ba: &Vec3) -> (Vec3, Vec3) {
        let d = ba - self.ba_used;
        (self.dp + self.j_dp_dba * d, self.dv + self.j_dv_dba * d)
    }
}

pub(crate) fn validate_stream(samples: &[ImuSample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::InvalidInput(format!("IMU sample {i} has non-finite values")));
        }
        if i > 0 && s.t <= samples[i - 1].t {
            return Err(Error::NonMonotonic { index: i, t: s.t });
        }
    }
    Ok(())
}

/// Integrates `samples` at the given gyroscope and accelerometer biases.
pub fn preintegrate(samples: &[ImuSample], bg: &Vec3, ba: &Vec3) -> Result<PreintegratedDelta> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { required: 2, got: samples.len() });
    }
    validate_stream(samples)?;

    let mut out = PreintegratedDelta::identity(*bg, *ba);
    for pair in samples.windows(2) {
        let (s0, s1) = (&pair[0], &pair[1]);
        let h = s1.t - s0.t;
        let omega = (s0.gyro + s1.gyro) * 0.5 - bg;
        let dr_next = out.dr * exp_so3(&(omega * h));

        let r0 = *out.dr.matrix();
        let r1 = *dr_next.matrix();
        let acc = (r0 * (s0.accel - ba) + r1 * (s1.accel - ba)) * 0.5;
        let r_mid = (r0 + r1) * 0.5;

        out.dp += out.dv * h + acc * (0.5 * h * h);
        out.dv += acc * h;
        out.j_dp_dba += out.j_dv_dba * h - r_mid * (0.5 * h * h);
        out.j_dv_dba -= r_mid * h;
        out.dr = dr_next;
    }
    out.dt = samples[samples.len() - 1].t - samples[0].t;
    Ok(out)
}

/// Re-runs the integration at a new gyroscope bias, keeping the accelerometer
/// bias the original increment was computed with.
pub fn repreintegrate(delta: &PreintegratedDelta, samples: &[ImuSample], bg_new: &Vec3) -> Result<PreintegratedDelta> {
    if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
        let span = last.t - first.t;
        if (span - delta.dt).abs() > TIME_EPSILON {
            return Err(Error::InvalidInput(format!(
                "sample span {span} does not match the increment duration {}",
                delta.dt
            )));
        }
    }
    preintegrate(samples, bg_new, &delta.ba_used)
}

/// Nominal sample period of a stream (median of consecutive differences).
pub fn nominal_period(samples: &[ImuSample]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let mut d: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

/// Rejects streams with a gap larger than twice the nominal period inside `[t0, t1]`.
pub fn check_gaps(samples: &[ImuSample], t0: f64, t1: f64) -> Result<()> {
    let Some(period) = nominal_period(samples) else {
        return Err(Error::TooFewSamples { required: 2, got: samples.len() });
    };
    for w in samples.windows(2) {
        if w[1].t < t0 || w[0].t > t1 {
            continue;
        }
        let gap = w[1].t - w[0].t;
        if gap > 2.0 * period {
            return Err(Error::ImuGap { t: w[0].t, gap, period });
        }
    }
    Ok(())
}

/// Samples covering `[t0, t1]`, with boundary samples linearly interpolated
/// when a keyframe time falls between two readings.
pub fn slice_interval(samples: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>> {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(Error::TooFewSamples { required: 2, got: 0 });
    };
    if t1 <= t0 {
        return Err(Error::InvalidInput(format!("empty interval [{t0}, {t1}]")));
    }
    if first.t > t0 + TIME_EPSILON || last.t < t1 - TIME_EPSILON {
        return Err(Error::ImuCoverage { start: first.t, end: last.t, t0, t1 });
    }

    let sample_at = |t: f64| -> ImuSample {
        // first index with sample time >= t - eps
        let i = samples.partition_point(|s| s.t < t - TIME_EPSILON);
        let s = samples[i.min(samples.len() - 1)];
        if (s.t - t).abs() <= TIME_EPSILON || i == 0 {
            ImuSample { t, ..s }
        } else {
            samples[i - 1].lerp(&s, t)
        }
    };

    let mut out = vec![sample_at(t0)];
    let start = samples.partition_point(|s| s.t <= t0 + TIME_EPSILON);
    out.extend(samples[start..].iter().take_while(|s| s.t < t1 - TIME_EPSILON).copied());
    out.push(sample_at(t1));
    Ok(out)
}

/// Preintegrates every consecutive keyframe interval of `times`.
pub fn preintegrate_keyframes(
    samples: &[ImuSample],
    times: &[f64],
    bg: &Vec3,
    ba: &Vec3,
) -> Result<Vec<PreintegratedDelta>> {
    times
        .windows(2)
        .map(|w| preintegrate(&slice_interval(samples, w[0], w[1])?, bg, ba))
        .collect()
}
