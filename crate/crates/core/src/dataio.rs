//! File formats: EuRoC-style IMU CSV, TUM trajectories, EuRoC ground truth,
//! and assembly of a keyframe window from them.
//!
//! Internal time is seconds since the first IMU sample. Raw nanosecond
//! stamps are kept alongside so that writing a file back reproduces them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::eskf::OrientationObservation;
use crate::error::{Error, Result};
use crate::geometry::{quaternion_from_rotation, rotation_from_quaternion, Rot3, Vec3};
use crate::linear_align::{Extrinsics, KeyframeTrack};
use crate::preintegration::ImuSample;
use crate::simulate::SimulatedDataset;

pub use crate::config::load_config;

pub const IMU_HEADER: &str =
    "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]";
pub const TUM_HEADER: &str = "# timestamp tx ty tz qx qy qz qw";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_finite(field: &str) -> std::result::Result<f64, String> {
    let v: f64 = field.trim().parse().map_err(|_| format!("`{}` is not a number", field.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value `{}`", field.trim()))
    }
}

/// Parses decimal seconds exactly into nanoseconds (digits beyond the ninth
/// decimal are rounded).
pub fn parse_seconds_ns(field: &str) -> std::result::Result<i64, String> {
    let s = field.trim();
    let bad = || format!("`{s}` is not a timestamp in seconds");
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if body.contains(['e', 'E']) {
        let v = parse_finite(s)?;
        return Ok((v * 1e9).round() as i64);
    }
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let whole: i64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let mut ns: i64 = 0;
    for (i, c) in frac.chars().enumerate() {
        let d = c.to_digit(10).expect("checked digits") as i64;
        if i < 9 {
            ns = ns * 10 + d;
        } else {
            if i == 9 && d >= 5 {
                ns += 1;
            }
            break;
        }
    }
    for _ in frac.len()..9 {
        ns *= 10;
    }
    let total = whole.checked_mul(1_000_000_000).and_then(|w| w.checked_add(ns)).ok_or_else(bad)?;
    Ok(if neg { -total } else { total })
}

/// Nanoseconds as decimal seconds with nine fractional digits.
pub fn format_seconds_ns(ns: i64) -> String {
    let sign = if ns < 0 { "-" } else { "" };
    let a = ns.unsigned_abs();
    format!("{sign}{}.{:09}", a / 1_000_000_000, a % 1_000_000_000)
}

fn seconds_to_ns(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

fn relative_seconds(ns: i64, origin_ns: i64) -> f64 {
    (ns - origin_ns) as f64 * 1e-9
}

/// IMU samples with their raw stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuData {
    pub samples: Vec<ImuSample>,
    pub stamps_ns: Vec<i64>,
}

impl ImuData {
    pub fn first_ns(&self) -> i64 {
        self.stamps_ns[0]
    }
}

/// Reads `timestamp_ns,wx,wy,wz,ax,ay,az` lines; `#` lines are headers.
pub fn load_imu_csv(path: &Path) -> Result<ImuData> {
    let text = read(path)?;
    let mut stamps_ns: Vec<i64> = Vec::new();
    let mut raw = Vec::new();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != 7 {
            return Err(parse_error(path, line, format!("expected 7 comma-separated fields, found {}", fields.len())));
        }
        let ns: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("`{}` is not an integer nanosecond stamp", fields[0].trim())))?;
        let mut v = [0.0; 6];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = parse_finite(f).map_err(|m| parse_error(path, line, m))?;
        }
        if let Some(&prev) = stamps_ns.last() {
            if ns <= prev {
                return Err(parse_error(path, line, format!("timestamp {ns} does not increase (previous {prev})")));
            }
        }
        stamps_ns.push(ns);
        raw.push(v);
    }
    let Some(&first) = stamps_ns.first() else {
        return Err(parse_error(path, 0, "no IMU samples"));
    };
    let samples = stamps_ns
        .iter()
        .zip(&raw)
        .map(|(&ns, v)| {
            ImuSample::new(relative_seconds(ns, first), Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
        })
        .collect();
    Ok(ImuData { samples, stamps_ns })
}

/// Writes samples whose times are seconds after `first_ns`.
pub fn write_imu_csv(path: &Path, samples: &[ImuSample], first_ns: i64) -> Result<()> {
    let mut out = String::with_capacity(samples.len() * 96);
    out.push_str(IMU_HEADER);
    out.push('\n');
    for s in samples {
        let ns = first_ns + seconds_to_ns(s.t);
        writeln!(out, "{ns},{},{},{},{},{},{}", s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z)
            .expect("writing to a String");
    }
    write(path, &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StampedPose {
    pub stamp_ns: i64,
    pub position: Vec3,
    pub rotation: Rot3,
}

impl StampedPose {
    pub fn seconds(&self) -> f64 {
        self.stamp_ns as f64 * 1e-9
    }
}

/// Reads TUM lines `t tx ty tz qx qy qz qw` (t in seconds).
pub fn load_trajectory(path: &Path) -> Result<Vec<StampedPose>> {
    let text = read(path)?;
    let mut poses: Vec<StampedPose> = Vec::new();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(parse_error(path, line, format!("expected 8 whitespace-separated fields, found {}", fields.len())));
        }
        let stamp_ns = parse_seconds_ns(fields[0]).map_err(|m| parse_error(path, line, m))?;
        let mut v = [0.0; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = parse_finite(f).map_err(|m| parse_error(path, line, m))?;
        }
        let rotation =
            rotation_from_quaternion([v[3], v[4], v[5], v[6]]).map_err(|e| parse_error(path, line, e.to_string()))?;
        if let Some(prev) = poses.last() {
            if stamp_ns <= prev.stamp_ns {
                return Err(parse_error(path, line, "timestamps do not increase"));
            }
        }
        poses.push(StampedPose { stamp_ns, position: Vec3::new(v[0], v[1], v[2]), rotation });
    }
    if poses.is_empty() {
        return Err(parse_error(path, 0, "no poses"));
    }
    Ok(poses)
}

pub fn write_trajectory(path: &Path, poses: &[StampedPose]) -> Result<()> {
    let mut out = String::new();
    out.push_str(TUM_HEADER);
    out.push('\n');
    for p in poses {
        let [qx, qy, qz, qw] = quaternion_from_rotation(&p.rotation);
        writeln!(
            out,
            "{} {} {} {} {qx} {qy} {qz} {qw}",
            format_seconds_ns(p.stamp_ns),
            p.position.x,
            p.position.y,
            p.position.z
        )
        .expect("writing to a String");
    }
    write(path, &out)
}

/// One row of an EuRoC `state_groundtruth_estimate0/data.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EurocState {
    pub stamp_ns: i64,
    /// Body (IMU) position in the world frame.
    pub position: Vec3,
    pub rotation: Rot3,
    pub velocity: Vec3,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
}

/// Reads EuRoC ground truth: `t_ns, p(3), q_wxyz(4), v(3), b_w(3), b_a(3)`.
pub fn load_euroc_groundtruth(path: &Path) -> Result<Vec<EurocState>> {
    let text = read(path)?;
    let mut states = Vec::new();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() < 17 {
            return Err(parse_error(path, line, format!("expected 17 comma-separated fields, found {}", fields.len())));
        }
        let stamp_ns: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, "bad nanosecond stamp"))?;
        let mut v = [0.0; 16];
        for (slot, f) in v.iter_mut().zip(&fields[1..17]) {
            *slot = parse_finite(f).map_err(|m| parse_error(path, line, m))?;
        }
        let rotation =
            rotation_from_quaternion([v[4], v[5], v[6], v[3]]).map_err(|e| parse_error(path, line, e.to_string()))?;
        states.push(EurocState {
            stamp_ns,
            position: Vec3::new(v[0], v[1], v[2]),
            rotation,
            velocity: Vec3::new(v[7], v[8], v[9]),
            gyro_bias: Vec3::new(v[10], v[11], v[12]),
            accel_bias: Vec3::new(v[13], v[14], v[15]),
        });
    }
    if states.is_empty() {
        return Err(parse_error(path, 0, "no ground-truth rows"));
    }
    Ok(states)
}

/// Everything one initialization run consumes.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub imu: ImuData,
    /// Body rotations from the trajectory file and up-to-scale camera positions.
    pub track: KeyframeTrack,
    pub observations: Vec<OrientationObservation>,
    pub extrinsics: Extrinsics,
    /// Raw stamps of the selected keyframes.
    pub keyframe_stamps_ns: Vec<i64>,
}

/// Picks poses for a keyframe window: from `start` seconds on, at `rate` Hz
/// (nearest pose to each target time), or every pose when `rate` is zero.
/// Only poses inside the IMU coverage are eligible.
pub fn select_keyframes(times: &[f64], start: f64, rate: f64, coverage: (f64, f64), limit: usize) -> Vec<usize> {
    let eligible: Vec<usize> = (0..times.len())
        .filter(|&i| times[i] >= start.max(coverage.0) - 1e-9 && times[i] <= coverage.1 + 1e-9)
        .collect();
    if rate <= 0.0 {
        return eligible.into_iter().take(limit).collect();
    }
    let Some(&first) = eligible.first() else { return vec![] };
    let t0 = times[first];
    let mut out: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for k in 0.. {
        if out.len() == limit {
            break;
        }
        let target = t0 + k as f64 / rate;
        while cursor + 1 < eligible.len() && times[eligible[cursor + 1]] <= target {
            cursor += 1;
        }
        if cursor + 1 == eligible.len() && target > times[eligible[cursor]] + 0.5 / rate {
            break;
        }
        let mut best = eligible[cursor];
        if let Some(&next) = eligible.get(cursor + 1) {
            if (times[next] - target).abs() < (target - times[best]).abs() {
                best = next;
            }
        }
        if out.last() != Some(&best) {
            out.push(best);
        }
    }
    out
}

/// Loads an IMU CSV and an up-to-scale camera trajectory into one window.
pub fn load_bundle(imu_path: &Path, trajectory_path: &Path, config: &Config) -> Result<DatasetBundle> {
    let imu = load_imu_csv(imu_path)?;
    let poses = load_trajectory(trajectory_path)?;
    let extrinsics = config.extrinsics()?;
    let origin = imu.first_ns();
    let times: Vec<f64> = poses.iter().map(|p| relative_seconds(p.stamp_ns, origin)).collect();
    let coverage = (imu.samples[0].t, imu.samples[imu.samples.len() - 1].t);
    let picked = select_keyframes(&times, config.start_time, config.keyframe_rate, coverage, config.window_size);
    if picked.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{} has {} poses inside the IMU time range of {}",
            trajectory_path.display(),
            picked.len(),
            imu_path.display()
        )));
    }
    let kf_times: Vec<f64> = picked.iter().map(|&i| times[i]).collect();
    let rotations: Vec<Rot3> = picked.iter().map(|&i| extrinsics.body_rotation(&poses[i].rotation)).collect();
    let positions: Vec<Vec3> = picked.iter().map(|&i| poses[i].position).collect();
    let observations = kf_times
        .iter()
        .zip(&rotations)
        .map(|(&t, &rotation)| OrientationObservation { t, rotation })
        .collect();
    Ok(DatasetBundle {
        imu,
        track: KeyframeTrack::new(kf_times, rotations, positions)?,
        observations,
        extrinsics,
        keyframe_stamps_ns: picked.iter().map(|&i| poses[i].stamp_ns).collect(),
    })
}

/// Reference values stored next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub scale: f64,
    pub gravity: [f64; 3],
    /// Gyroscope bias at the last keyframe.
    pub gyro_bias: [f64; 3],
    /// Mean accelerometer bias over the keyframe window.
    pub accel_bias: [f64; 3],
    pub keyframe_times: Vec<f64>,
    /// World-frame body velocities at the keyframes.
    pub velocities: Vec<[f64; 3]>,
}

impl Truth {
    pub fn from_simulation(ds: &SimulatedDataset) -> Self {
        let gt = &ds.ground_truth;
        Self {
            scale: ds.config.scale,
            gravity: gt.gravity.into(),
            gyro_bias: ds.final_gyro_bias().into(),
            accel_bias: ds.mean_accel_bias().into(),
            keyframe_times: gt.keyframe_times(),
            velocities: gt.keyframe_velocities().into_iter().map(Into::into).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&read(path)?).map_err(|e| parse_error(path, e.line(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &(serde_json::to_string_pretty(self).expect("plain data serializes") + "\n"))
    }
}

/// Observed camera poses of a simulated run, up to scale.
pub fn observed_poses(ds: &SimulatedDataset) -> Vec<StampedPose> {
    let kf = &ds.keyframes;
    kf.track
        .times
        .iter()
        .zip(&kf.track.positions)
        .zip(&kf.camera_rotations)
        .map(|((&t, &position), &rotation)| StampedPose { stamp_ns: seconds_to_ns(t), position, rotation })
        .collect()
}

/// True metric camera poses at the keyframes of a simulated run.
pub fn camera_ground_truth(ds: &SimulatedDataset) -> Vec<StampedPose> {
    let gt = &ds.ground_truth;
    let ext = &ds.config.extrinsics;
    gt.keyframe_indices
        .iter()
        .map(|&i| StampedPose {
            stamp_ns: seconds_to_ns(gt.times[i]),
            position: gt.positions[i] + gt.rotations[i] * ext.translation,
            rotation: ext.camera_rotation(&gt.rotations[i]),
        })
        .collect()
}

/// Writes `imu.csv`, `keyframes.txt` (observed camera poses, up to scale),
/// `groundtruth.txt` (true camera poses, metric) and `truth.json`.
pub fn write_dataset(dir: &Path, ds: &SimulatedDataset) -> Result<DatasetPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::in_dir(dir);
    write_imu_csv(&paths.imu, &ds.imu.samples, 0)?;
    write_trajectory(&paths.keyframes, &observed_poses(ds))?;
    write_trajectory(&paths.groundtruth, &camera_ground_truth(ds))?;
    Truth::from_simulation(ds).save(&paths.truth)?;
    Ok(paths)
}

/// Standard file names inside a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub imu: PathBuf,
    pub keyframes: PathBuf,
    pub groundtruth: PathBuf,
    pub truth: PathBuf,
    pub config: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            imu: dir.join("imu.csv"),
            keyframes: dir.join("keyframes.txt"),
            groundtruth: dir.join("groundtruth.txt"),
            truth: dir.join("truth.json"),
            config: dir.join("config.toml"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn temp_file(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn parses_a_single_imu_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = temp_file(&dir, "imu.csv", "#header\n0,0,0,0,0,0,9.8\n100000000,0.01,0.02,0.03,0.1,0.2,9.8\n");
        let data = load_imu_csv(&p).unwrap();
        assert_eq!(data.samples.len(), 2);
        let s = data.samples[1];
        assert_eq!(s.t, 0.1);
        assert_eq!(s.gyro, Vec3::new(0.01, 0.02, 0.03));
        assert_eq!(s.accel, Vec3::new(0.1, 0.2, 9.8));
    }

    #[test]
    fn imu_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = temp_file(&dir, "a.csv", "# h\n0,0,0,0,0,0,0\n5,0,0,x,0,0,0\n");
        assert!(matches!(load_imu_csv(&p), Err(Error::Parse { line: 3, .. })));
        let p = temp_file(&dir, "b.csv", "0,0,0,0,0,0,0\n0,0,0,0,0,0,0\n");
        assert!(matches!(load_imu_csv(&p), Err(Error::Parse { line: 2, .. })));
        let p = temp_file(&dir, "c.csv", "0,0,0,0,0,0,NaN\n");
        assert!(matches!(load_imu_csv(&p), Err(Error::Parse { line: 1, .. })));
        let p = temp_file(&dir, "d.csv", "# only a header\n");
        assert!(load_imu_csv(&p).is_err());
        let p = temp_file(&dir, "e.csv", "0,0,0\n");
        assert!(matches!(load_imu_csv(&p), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(load_imu_csv(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn tum_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = temp_file(&dir, "t.txt", "0.0 0 0 0 0 0 0 1\n0.1 1 2 3 0 0 0.7071068 0.7071068\n");
        let poses = load_trajectory(&p).unwrap();
        assert_eq!(poses[0].stamp_ns, 0);
        assert_eq!(poses[0].rotation, Rot3::identity());
        assert_eq!(poses[1].seconds(), 0.1);
        assert_eq!(poses[1].position, Vec3::new(1.0, 2.0, 3.0));
        assert_relative_eq!(
            poses[1].rotation.into_inner(),
            exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2)).into_inner(),
            epsilon = 1e-7
        );
    }

    #[test]
    fn tum_rejects_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = temp_file(&dir, "a.txt", "0 0 0 0 0 0 0 1.01\n");
        assert!(matches!(load_trajectory(&p), Err(Error::Parse { line: 1, .. })));
        let p = temp_file(&dir, "b.txt", "0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n");
        assert!(matches!(load_trajectory(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn seconds_parse_exactly() {
        assert_eq!(parse_seconds_ns("1403636579.763555527").unwrap(), 1_403_636_579_763_555_527);
        assert_eq!(parse_seconds_ns("0.1").unwrap(), 100_000_000);
        assert_eq!(parse_seconds_ns("-0.5").unwrap(), -500_000_000);
        assert_eq!(parse_seconds_ns("2").unwrap(), 2_000_000_000);
        assert_eq!(parse_seconds_ns(".0000000016").unwrap(), 2);
        assert_eq!(parse_seconds_ns("1e-3").unwrap(), 1_000_000);
        assert!(parse_seconds_ns("1.2.3").is_err());
        assert!(parse_seconds_ns("abc").is_err());
        assert_eq!(format_seconds_ns(1_403_636_579_763_555_527), "1403636579.763555527");
        assert_eq!(format_seconds_ns(-5), "-0.000000005");
    }

    #[test]
    fn one_hour_stamps_keep_microseconds() {
        let ns = 3_600_000_000_000i64 + 123_456_789;
        let t = relative_seconds(ns, 0);
        assert!((t - 3600.123456789).abs() < 1e-6);
    }

    #[test]
    fn euroc_groundtruth_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = temp_file(
            &dir,
            "gt.csv",
            "#timestamp, p_RS_R_x [m], ...\n1403636579758555392,4.688319,-1.786938,0.783338,0.534108,-0.153029,-0.827383,-0.082152,-0.027876,0.033207,0.800006,-0.003172,0.021267,0.078502,-0.025266,0.136696,0.075593\n",
        );
        let s = &load_euroc_groundtruth(&p).unwrap()[0];
        assert_eq!(s.stamp_ns, 1403636579758555392);
        assert_eq!(s.position, Vec3::new(4.688319, -1.786938, 0.783338));
        assert_eq!(s.velocity, Vec3::new(-0.027876, 0.033207, 0.800006));
        assert_eq!(s.accel_bias, Vec3::new(-0.025266, 0.136696, 0.075593));
        let q = quaternion_from_rotation(&s.rotation);
        let n = (0.534108f64.powi(2) + 0.153029f64.powi(2) + 0.827383f64.powi(2) + 0.082152f64.powi(2)).sqrt();
        assert_relative_eq!(q[3], 0.534108 / n, epsilon = 1e-9);
        assert_relative_eq!(q[0], -0.153029 / n, epsilon = 1e-9);
    }

    #[test]
    fn simulated_dataset_round_trip() {
        use crate::simulate::{simulate, NoiseConfig, SimulationConfig};
        let cfg = SimulationConfig {
            noise: NoiseConfig { gyro_noise_std: 1e-3, accel_noise_std: 1e-2, rot_obs_noise_std: 0.1, ..NoiseConfig::zero() },
            scale: 2.0,
            ..Default::default()
        };
        let ds = simulate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_dataset(dir.path(), &ds).unwrap();

        let imu = load_imu_csv(&paths.imu).unwrap();
        assert_eq!(imu.samples, ds.imu.samples);

        let kf = load_trajectory(&paths.keyframes).unwrap();
        assert_eq!(kf.len(), 10);
        for (k, pose) in kf.iter().enumerate() {
            assert_eq!(pose.seconds(), ds.keyframes.track.times[k]);
            assert!((pose.position - ds.keyframes.track.positions[k]).norm() < 1e-12);
            assert!((pose.rotation.matrix() - ds.keyframes.camera_rotations[k].matrix()).abs().max() < 1e-12);
        }

        let bundle = load_bundle(&paths.imu, &paths.keyframes, &Config::default()).unwrap();
        assert_eq!(bundle.track.times, ds.keyframes.track.times);
        for (a, b) in bundle.track.rotations.iter().zip(&ds.keyframes.track.rotations) {
            assert!((a.matrix() - b.matrix()).abs().max() < 1e-12);
        }
        assert_eq!(Truth::load(&paths.truth).unwrap(), Truth::from_simulation(&ds));

        // writing what was read reproduces the IMU file byte for byte; the
        // quaternions pass through a rotation matrix, so compare those by value
        let again = dir.path().join("again");
        fs::create_dir_all(&again).unwrap();
        write_imu_csv(&again.join("imu.csv"), &imu.samples, imu.first_ns()).unwrap();
        write_trajectory(&again.join("kf.txt"), &kf).unwrap();
        assert_eq!(fs::read(&paths.imu).unwrap(), fs::read(again.join("imu.csv")).unwrap());
        let kf2 = load_trajectory(&again.join("kf.txt")).unwrap();
        for (a, b) in kf.iter().zip(&kf2) {
            assert_eq!(a.stamp_ns, b.stamp_ns);
            assert_eq!(a.position, b.position);
            assert!((a.rotation.matrix() - b.rotation.matrix()).abs().max() < 1e-15);
        }
    }

    #[test]
    fn keyframe_selection() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        assert_eq!(select_keyframes(&times, 0.0, 0.0, (0.0, 10.0), 4), vec![0, 1, 2, 3]);
        assert_eq!(select_keyframes(&times, 0.0, 10.0, (0.0, 10.0), 4), vec![0, 2, 4, 6]);
        assert_eq!(select_keyframes(&times, 1.0, 5.0, (0.0, 10.0), 3), vec![20, 24, 28]);
        // poses before the IMU starts are skipped
        assert_eq!(select_keyframes(&times, 0.0, 0.0, (0.12, 10.0), 2), vec![3, 4]);
        // stops at the end of coverage
        assert_eq!(select_keyframes(&times, 0.0, 10.0, (0.0, 0.3), 10), vec![0, 2, 4, 6]);
    }
}
