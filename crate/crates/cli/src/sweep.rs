//! Experiment grids over simulated data.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use viinit_core::config::{Config, SweepSection};
use viinit_core::dataio::{camera_ground_truth, observed_poses, Truth};
use viinit_core::eskf::estimate_gyro_bias;
use viinit_core::eval::{format_row, median, rotation_rmse, EvalReport};
use viinit_core::geometry::Rot3;
use viinit_core::pipeline::{self, SolutionRecord, StageTimings};
use viinit_core::simulate::{simulate, SimulatedDataset};

use crate::commands::evaluate_record;
use crate::error::{CliError, Result};
use crate::io::{create_dir, write_text};
use crate::manifest::{RunManifest, TimingRecord};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

pub const PRESETS: [&str; 2] = ["imu-noise", "rotation-noise"];

/// IMU noise used for the simulated experiments of the presets.
pub const EUROC_GYRO_NOISE: f64 = 1.7e-4;
pub const EUROC_GYRO_WALK: f64 = 2e-5;
pub const EUROC_ACCEL_NOISE: f64 = 2e-3;
pub const PRESET_GYRO_BIAS: [f64; 3] = [0.01, -0.02, 0.015];
pub const PRESET_ACCEL_BIAS: [f64; 3] = [0.05, -0.03, 0.02];
pub const PRESET_SEEDS: u64 = 20;
/// Orientation noise injected by the `rotation-noise` preset, rad per axis.
pub const INJECTED_ROTATION_NOISE: f64 = 0.1;

/// Overwrites the simulation and sweep settings with a named preset.
///
/// `imu-noise` runs 20 seeds with realistic IMU noise and biases; `rotation-noise`
/// adds 0.1 rad of orientation noise to the observations.
pub fn apply_preset(config: &mut Config, name: &str) -> Result<()> {
    let sim = &mut config.simulation;
    sim.gyro_noise_std = EUROC_GYRO_NOISE;
    sim.gyro_walk_std = EUROC_GYRO_WALK;
    sim.accel_noise_std = EUROC_ACCEL_NOISE;
    sim.bg_true = PRESET_GYRO_BIAS;
    sim.ba_true = PRESET_ACCEL_BIAS;
    let mut sweep = SweepSection::new(1, PRESET_SEEDS);
    match name {
        "imu-noise" => {}
        "rotation-noise" => {
            sweep.rot_noise = vec![INJECTED_ROTATION_NOISE];
            config.rotation_offset_removal = true;
        }
        other => {
            return Err(CliError::Usage(format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", "))))
        }
    }
    config.sweep = Some(sweep);
    Ok(())
}

/// Axis values of a cell, bitwise, for grouping seeds.
type GroupKey = (u64, usize, u64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub seed: u64,
    pub rot_noise: f64,
    pub window_size: usize,
    pub accel_noise: f64,
}

impl SweepCell {
    fn group(&self) -> GroupKey {
        (self.rot_noise.to_bits(), self.window_size, self.accel_noise.to_bits())
    }
}

/// Cross product of the axes, seeds varying fastest. Empty axes fall back to
/// the base configuration.
pub fn cells(config: &Config, sweep: &SweepSection) -> Vec<SweepCell> {
    let or_base = |axis: &[f64], base: f64| if axis.is_empty() { vec![base] } else { axis.to_vec() };
    let rot = or_base(&sweep.rot_noise, config.simulation.rot_obs_noise_std);
    let accel = or_base(&sweep.accel_noise, config.simulation.accel_noise_std);
    let windows = if sweep.window_size.is_empty() { vec![config.window_size] } else { sweep.window_size.clone() };
    let mut out = Vec::new();
    for &rot_noise in &rot {
        for &window_size in &windows {
            for &accel_noise in &accel {
                for seed in sweep.seed_start..sweep.seed_start + sweep.seed_count {
                    out.push(SweepCell { index: out.len(), seed, rot_noise, window_size, accel_noise });
                }
            }
        }
    }
    out
}

/// The configuration one cell runs with. Nonzero orientation noise also sets
/// the filter's observation noise and a matching initial rotation variance.
pub fn cell_config(base: &Config, cell: &SweepCell) -> Config {
    let mut c = base.clone();
    c.sweep = None;
    c.simulation.seed = cell.seed;
    c.simulation.rot_obs_noise_std = cell.rot_noise;
    c.simulation.accel_noise_std = cell.accel_noise;
    if cell.rot_noise > 0.0 {
        c.obs_noise = cell.rot_noise;
        c.initial_cov_rotation = c.initial_cov_rotation.max(cell.rot_noise * cell.rot_noise);
    }
    c.window_size = cell.window_size;
    c.simulation.duration = c.simulation.duration.max(cell.window_size as f64 / c.simulation.keyframe_rate);
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    NumericFailure,
    InputError,
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellStatus::Ok => "ok",
            CellStatus::NumericFailure => "numeric_failure",
            CellStatus::InputError => "input_error",
        })
    }
}

/// Index of `rot_rmse` and `obs_rot_rmse` in [`EvalReport::values`].
const ROT_RMSE: usize = 5;
const OBS_ROT_RMSE: usize = 6;

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: SweepCell,
    pub status: CellStatus,
    /// Metrics in [`EvalReport::CSV_COLUMNS`] order; NaN where unavailable.
    /// A run that fails after the filter stage still carries its rotation
    /// metrics.
    pub values: [f64; 11],
    pub timings: Option<StageTimings>,
}

impl CellResult {
    pub fn report(&self) -> Option<EvalReport> {
        (self.status == CellStatus::Ok).then(|| EvalReport::from_values(&self.values))
    }
}

/// Rotation metrics of the filter output alone.
fn filter_rotation_metrics(ds: &SimulatedDataset, config: &Config) -> Option<(f64, f64)> {
    let kf = &ds.keyframes;
    let n = kf.track.len().min(config.window_size);
    let est = estimate_gyro_bias(&kf.observations[..n], &ds.imu.samples, &config.pipeline().eskf).ok()?;
    let ext = &ds.config.extrinsics;
    let corrected: Vec<Rot3> = est.rotations.iter().map(|b| ext.camera_rotation(b)).collect();
    let gt: Vec<Rot3> = camera_ground_truth(ds)[..n].iter().map(|p| p.rotation).collect();
    let remove = config.rotation_offset_removal;
    Some((
        rotation_rmse(&corrected, &gt, remove).ok()?,
        rotation_rmse(&kf.camera_rotations[..n], &gt, remove).ok()?,
    ))
}

/// Simulates, initializes and scores one cell in memory.
pub fn run_cell(base: &Config, cell: &SweepCell) -> CellResult {
    let config = cell_config(base, cell);
    let mut dataset = None;
    let outcome = (|| -> Result<(EvalReport, StageTimings)> {
        let ds = dataset.insert(simulate(&config.simulation()?)?);
        let kf = &ds.keyframes;
        let extrinsics = &ds.config.extrinsics;
        let solution = pipeline::run(&ds.imu.samples, &kf.observations, &kf.track, extrinsics, &config.pipeline())?;
        let observed = observed_poses(ds);
        let stamps: Vec<i64> = observed.iter().map(|p| p.stamp_ns).collect();
        let record = SolutionRecord::new(&solution, &kf.track, extrinsics, &stamps);
        let truth = Truth::from_simulation(ds);
        let report = evaluate_record(&record, &camera_ground_truth(ds), Some(&observed), Some(&truth), &config)?;
        Ok((report, solution.timings))
    })();
    match outcome {
        Ok((report, timings)) => {
            CellResult { cell: *cell, status: CellStatus::Ok, values: report.values(), timings: Some(timings) }
        }
        Err(e) => {
            warn!("cell {} (seed {}): {e}", cell.index, cell.seed);
            let status = if e.is_numeric() { CellStatus::NumericFailure } else { CellStatus::InputError };
            let mut values = [f64::NAN; 11];
            if let Some((rot, obs)) = dataset.as_ref().and_then(|ds| filter_rotation_metrics(ds, &config)) {
                values[ROT_RMSE] = rot;
                values[OBS_ROT_RMSE] = obs;
            }
            CellResult { cell: *cell, status, values, timings: None }
        }
    }
}

/// Medians over the seeds of one axis combination.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub rot_noise: f64,
    pub window_size: usize,
    pub accel_noise: f64,
    pub runs: usize,
    pub failures: usize,
    /// Share of runs whose corrected rotations beat the observations, %.
    pub rot_improved_pct: f64,
    pub medians: [f64; 11],
}

/// Groups cells by axis values. Medians skip missing entries, so rotation
/// columns also count runs that failed after the filter stage.
pub fn summarize(results: &[CellResult]) -> Vec<SummaryRow> {
    let mut groups: Vec<(GroupKey, Vec<&CellResult>)> = Vec::new();
    for r in results {
        match groups.iter_mut().find(|(g, _)| *g == r.cell.group()) {
            Some((_, members)) => members.push(r),
            None => groups.push((r.cell.group(), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(_, members)| {
            let scored: Vec<(f64, f64)> = members
                .iter()
                .map(|r| (r.values[ROT_RMSE], r.values[OBS_ROT_RMSE]))
                .filter(|(a, b)| !a.is_nan() && !b.is_nan())
                .collect();
            let improved = scored.iter().filter(|(rot, obs)| rot < obs).count();
            let cell = members[0].cell;
            SummaryRow {
                rot_noise: cell.rot_noise,
                window_size: cell.window_size,
                accel_noise: cell.accel_noise,
                runs: members.len(),
                failures: members.iter().filter(|r| r.status != CellStatus::Ok).count(),
                rot_improved_pct: if scored.is_empty() { f64::NAN } else { 100.0 * improved as f64 / scored.len() as f64 },
                medians: std::array::from_fn(|c| median(&members.iter().map(|r| r.values[c]).collect::<Vec<_>>())),
            }
        })
        .collect()
}

pub fn sweep_csv(results: &[CellResult]) -> String {
    let mut out = format!("cell,seed,rot_noise,window_size,accel_noise,status,{}\n", EvalReport::csv_header());
    for r in results {
        let c = &r.cell;
        let metrics = format_row(&r.values);
        out.push_str(&format!(
            "{},{},{},{},{},{},{metrics}\n",
            c.index, c.seed, c.rot_noise, c.window_size, c.accel_noise, r.status
        ));
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let medians: Vec<String> = EvalReport::CSV_COLUMNS.iter().map(|c| format!("median_{c}")).collect();
    let mut out = format!("rot_noise,window_size,accel_noise,runs,failures,rot_improved_pct,{}\n", medians.join(","));
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.rot_noise,
            r.window_size,
            r.accel_noise,
            r.runs,
            r.failures,
            format_row(&[r.rot_improved_pct]),
            format_row(&r.medians)
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub results: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every cell of the configured sweep on the rayon pool and writes
/// `sweep.csv` (one row per cell, in cell order) and `summary.csv`.
pub fn cmd_sweep(config: &Config, out: &Path) -> Result<SweepOutput> {
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| CliError::Usage("the configuration has no [sweep] table; add one or pass --preset".into()))?;
    sweep.validate()?;
    let cells = cells(config, &sweep);
    for cell in &cells {
        let c = cell_config(config, cell);
        c.validate()?;
        c.simulation()?;
    }

    let start = Instant::now();
    let results: Vec<CellResult> = cells.par_iter().map(|cell| run_cell(config, cell)).collect();
    let summary = summarize(&results);
    let failed = results.iter().filter(|r| r.status != CellStatus::Ok).count();
    info!("{} cells in {:.2} s, {failed} failed", results.len(), start.elapsed().as_secs_f64());

    create_dir(out)?;
    let sweep_path = out.join(SWEEP_CSV);
    let summary_path = out.join(SUMMARY_CSV);
    write_text(&sweep_path, &sweep_csv(&results))?;
    write_text(&summary_path, &summary_csv(&summary))?;

    let mut manifest = RunManifest::new("sweep", config);
    manifest.seeds = (sweep.seed_start..sweep.seed_start + sweep.seed_count).collect();
    let timings: Vec<TimingRecord> = results.iter().filter_map(|r| r.timings.as_ref()).map(TimingRecord::from).collect();
    if !timings.is_empty() {
        let med = |f: fn(&TimingRecord) -> f64| median(&timings.iter().map(f).collect::<Vec<_>>());
        manifest.timings_us = Some(TimingRecord {
            gyro_bias_us: med(|t| t.gyro_bias_us),
            preintegration_us: med(|t| t.preintegration_us),
            linear_us: med(|t| t.linear_us),
            refine_us: med(|t| t.refine_us),
            total_us: med(|t| t.total_us),
        });
    }
    manifest.output(&sweep_path)?;
    manifest.output(&summary_path)?;
    manifest.write(out)?;

    if failed == results.len() {
        let numeric = results.iter().all(|r| r.status == CellStatus::NumericFailure);
        let msg = format!("all {failed} sweep cells failed");
        return Err(if numeric {
            viinit_core::Error::Divergence(msg).into()
        } else {
            CliError::Usage(msg)
        });
    }
    Ok(SweepOutput { results, summary })
}
