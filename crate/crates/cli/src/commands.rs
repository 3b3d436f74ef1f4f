//! The `simulate`, `init` and `eval` subcommands.

use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use viinit_core::config::Config;
use viinit_core::dataio::{
    format_seconds_ns, load_bundle, load_trajectory, write_dataset, write_trajectory, DatasetPaths, StampedPose, Truth,
};
use viinit_core::eval::{evaluate, format_row, median_row, EvalInputs, EvalReport, Reference};
use viinit_core::geometry::{Rot3, Vec3};
use viinit_core::pipeline::{self, SolutionRecord, StageTimings};
use viinit_core::simulate::simulate;
use viinit_core::Error;

use crate::error::{CliError, Result};
use crate::io::{create_dir, read_json, write_json, write_text};
use crate::manifest::{RunManifest, TimingRecord};

pub const SOLUTION_FILE: &str = "solution.json";
pub const CORRECTED_FILE: &str = "corrected_keyframes.txt";
pub const TIMING_FILE: &str = "timing.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Largest stamp difference accepted when pairing keyframes with reference poses.
pub const MATCH_TOLERANCE_NS: i64 = 1_000_000;

/// Writes a synthetic dataset and a snapshot of the configuration to `out`.
pub fn cmd_simulate(config: &Config, out: &Path) -> Result<DatasetPaths> {
    let sim = config.simulation()?;
    let ds = simulate(&sim)?;
    let paths = write_dataset(out, &ds)?;
    write_text(&paths.config, &config.to_toml())?;

    let mut manifest = RunManifest::new("simulate", config);
    manifest.seeds.push(sim.trajectory.seed);
    for p in [&paths.imu, &paths.keyframes, &paths.groundtruth, &paths.truth, &paths.config] {
        manifest.output(p)?;
    }
    manifest.write(out)?;
    info!(
        "simulated {} IMU samples and {} keyframes into {}",
        ds.imu.samples.len(),
        ds.keyframes.track.len(),
        out.display()
    );
    Ok(paths)
}

#[derive(Debug, Clone)]
pub struct InitOutput {
    pub record: SolutionRecord,
    pub timings: StageTimings,
    pub solution_path: PathBuf,
}

/// Metric camera poses with the corrected orientations.
pub fn corrected_poses(record: &SolutionRecord) -> Result<Vec<StampedPose>> {
    let rotations = record.camera_rotation_matrices()?;
    Ok(record
        .keyframe_stamps_ns
        .iter()
        .zip(record.camera_position_vectors())
        .zip(rotations)
        .map(|((&stamp_ns, position), rotation)| StampedPose { stamp_ns, position, rotation })
        .collect())
}

/// Runs the three stages on an IMU file and an up-to-scale trajectory.
pub fn cmd_init(config: &Config, imu: &Path, keyframes: &Path, out: &Path) -> Result<InitOutput> {
    let bundle = load_bundle(imu, keyframes, config)?;
    let solution =
        pipeline::run(&bundle.imu.samples, &bundle.observations, &bundle.track, &bundle.extrinsics, &config.pipeline())?;
    let record = SolutionRecord::new(&solution, &bundle.track, &bundle.extrinsics, &bundle.keyframe_stamps_ns);

    create_dir(out)?;
    let solution_path = out.join(SOLUTION_FILE);
    write_json(&solution_path, &record)?;
    let corrected = out.join(CORRECTED_FILE);
    write_trajectory(&corrected, &corrected_poses(&record)?)?;
    let timing = TimingRecord::from(&solution.timings);
    let timing_path = out.join(TIMING_FILE);
    write_json(&timing_path, &timing)?;

    let mut manifest = RunManifest::new("init", config);
    manifest.input(imu)?;
    manifest.input(keyframes)?;
    manifest.timings_us = Some(timing);
    for p in [&solution_path, &corrected, &timing_path] {
        manifest.output(p)?;
    }
    manifest.write(out)?;
    info!(
        "s = {:.6}, |g| = {:.4}, bg = {:?}, ba = {:?} ({:.0} us)",
        record.scale,
        Vec3::from(record.gravity).norm(),
        record.gyro_bias,
        record.accel_bias,
        timing.total_us
    );
    Ok(InitOutput { record, timings: solution.timings, solution_path })
}

/// Reference pose nearest to each stamp, within [`MATCH_TOLERANCE_NS`].
pub fn match_stamps<'a>(stamps: &[i64], poses: &'a [StampedPose], what: &str) -> Result<Vec<&'a StampedPose>> {
    stamps
        .iter()
        .map(|&s| {
            let i = poses.partition_point(|p| p.stamp_ns < s);
            let best = [i.checked_sub(1), Some(i)]
                .into_iter()
                .flatten()
                .filter_map(|j| poses.get(j))
                .min_by_key(|p| (p.stamp_ns - s).abs());
            match best {
                Some(p) if (p.stamp_ns - s).abs() <= MATCH_TOLERANCE_NS => Ok(p),
                _ => Err(Error::InvalidInput(format!(
                    "{what} has no pose within 1 ms of keyframe stamp {}",
                    format_seconds_ns(s)
                ))
                .into()),
            }
        })
        .collect()
}

/// Truth velocities at the solution's keyframes.
fn truth_velocities(truth: &Truth, record: &SolutionRecord) -> Result<Vec<Vec3>> {
    let n = record.len();
    let aligned = truth.keyframe_times.len() >= n
        && truth.velocities.len() >= n
        && record.keyframe_times.iter().zip(&truth.keyframe_times).all(|(a, b)| (a - b).abs() < 1e-6);
    if !aligned {
        return Err(Error::InvalidInput("truth keyframe times do not match the solution".into()).into());
    }
    Ok(truth.velocities[..n].iter().map(|&v| Vec3::from(v)).collect())
}

/// Scores a solution against reference camera poses and, when available,
/// simulator truth and the raw observations.
pub fn evaluate_record(
    record: &SolutionRecord,
    groundtruth: &[StampedPose],
    observed: Option<&[StampedPose]>,
    truth: Option<&Truth>,
    config: &Config,
) -> Result<EvalReport> {
    record.validate()?;
    let gt = match_stamps(&record.keyframe_stamps_ns, groundtruth, "ground truth")?;
    let gt_positions: Vec<Vec3> = gt.iter().map(|p| p.position).collect();
    let gt_rotations: Vec<Rot3> = gt.iter().map(|p| p.rotation).collect();
    let observed_rotations: Option<Vec<Rot3>> = match observed {
        Some(poses) => Some(
            match_stamps(&record.keyframe_stamps_ns, poses, "observed trajectory")?.iter().map(|p| p.rotation).collect(),
        ),
        None => None,
    };
    let velocities = truth.map(|t| truth_velocities(t, record)).transpose()?;
    let reference = Reference {
        scale: truth.map(|t| t.scale),
        gravity: truth.map_or(Vec3::new(0.0, 0.0, -config.gravity_magnitude), |t| Vec3::from(t.gravity)),
        velocities: velocities.as_deref(),
        gyro_bias: truth.map(|t| Vec3::from(t.gyro_bias)),
        accel_bias: truth.map(|t| Vec3::from(t.accel_bias)),
    };
    let positions = record.camera_position_vectors();
    let rotations = record.camera_rotation_matrices()?;
    let estimate_velocities = record.velocity_vectors();
    Ok(evaluate(&EvalInputs {
        positions: &positions,
        gt_positions: &gt_positions,
        rotations: &rotations,
        gt_rotations: &gt_rotations,
        observed_rotations: observed_rotations.as_deref(),
        pipeline_scale: record.scale,
        gravity: Vec3::from(record.gravity),
        velocities: &estimate_velocities,
        gyro_bias: Vec3::from(record.gyro_bias),
        accel_bias: Vec3::from(record.accel_bias),
        reference,
        remove_rotation_offset: config.rotation_offset_removal,
    })?)
}

/// Files scored for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSources {
    pub solution: PathBuf,
    pub groundtruth: PathBuf,
    pub truth: Option<PathBuf>,
    pub observations: Option<PathBuf>,
}

impl EvalSources {
    /// A directory holding both a dataset and the solution computed on it.
    /// `truth.json` and `keyframes.txt` are used when present.
    pub fn in_dir(dir: &Path) -> Self {
        let paths = DatasetPaths::in_dir(dir);
        Self {
            solution: dir.join(SOLUTION_FILE),
            groundtruth: paths.groundtruth,
            truth: paths.truth.exists().then_some(paths.truth),
            observations: paths.keyframes.exists().then_some(paths.keyframes),
        }
    }

    pub fn evaluate(&self, config: &Config) -> Result<EvalReport> {
        let record: SolutionRecord = read_json(&self.solution)?;
        let groundtruth = load_trajectory(&self.groundtruth)?;
        let observed = self.observations.as_deref().map(load_trajectory).transpose()?;
        let truth = self.truth.as_deref().map(Truth::load).transpose()?;
        evaluate_record(&record, &groundtruth, observed.as_deref(), truth.as_ref(), config)
    }
}

#[derive(Debug, Clone, Serialize)]
struct NamedReport<'a> {
    run: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

#[derive(Debug, Clone, Serialize)]
struct BatchReport<'a> {
    runs: Vec<NamedReport<'a>>,
    median: EvalReport,
}

/// Scores each named run. One run gives a flat `report.json`; several give
/// per-run entries plus a median, and `report.csv` gains a `median` row.
pub fn cmd_eval(config: &Config, runs: &[(String, EvalSources)], out: &Path) -> Result<Vec<EvalReport>> {
    if runs.is_empty() {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }
    let reports = runs.iter().map(|(_, src)| src.evaluate(config)).collect::<Result<Vec<_>>>()?;

    let mut csv = format!("run,{}\n", EvalReport::csv_header());
    for ((name, _), r) in runs.iter().zip(&reports) {
        csv.push_str(&format!("{name},{}\n", r.to_csv_row()));
    }
    create_dir(out)?;
    let json_path = out.join(REPORT_JSON);
    if reports.len() == 1 {
        write_json(&json_path, &reports[0])?;
    } else {
        let median = median_row(&reports);
        csv.push_str(&format!("median,{}\n", format_row(&median)));
        let batch = BatchReport {
            runs: runs.iter().zip(&reports).map(|((run, _), report)| NamedReport { run, report }).collect(),
            median: EvalReport::from_values(&median),
        };
        write_json(&json_path, &batch)?;
    }
    let csv_path = out.join(REPORT_CSV);
    write_text(&csv_path, &csv)?;

    let mut manifest = RunManifest::new("eval", config);
    for (_, src) in runs {
        for p in [Some(&src.solution), Some(&src.groundtruth), src.truth.as_ref(), src.observations.as_ref()].into_iter().flatten() {
            manifest.input(p)?;
        }
    }
    manifest.output(&json_path)?;
    manifest.output(&csv_path)?;
    manifest.write(out)?;
    for ((name, _), r) in runs.iter().zip(&reports) {
        info!("{name}: scale error {:.4}%, gravity {:.4} deg, rotation RMSE {:.4} rad", r.scale_error_pct, r.grav_angle_err_deg, r.rot_rmse);
    }
    Ok(reports)
}
