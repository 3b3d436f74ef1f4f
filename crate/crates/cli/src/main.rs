use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use viinit_cli::sweep::PRESETS;
use viinit_cli::{apply_preset, cmd_eval, cmd_init, cmd_simulate, cmd_sweep, EvalSources, Result};
use viinit_core::config::{load_config, Config};
use viinit_core::dataio::DatasetPaths;

#[derive(Debug, Parser)]
#[command(
    name = "viinit",
    version,
    about = "Inertial initialization for monocular visual-inertial odometry",
    after_help = "Set RUST_LOG (error, warn, info, debug) for log output; the default is warn.\n\
                  Exit status: 0 on success, 1 on a numeric failure, 2 on bad input."
)]
struct Cli {
    /// TOML configuration; every key has a default.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset: imu.csv, keyframes.txt, groundtruth.txt,
    /// truth.json and config.toml.
    Simulate {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Overrides `simulation.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate gyroscope bias, corrected rotations, velocities, gravity,
    /// scale and accelerometer bias. Writes solution.json,
    /// corrected_keyframes.txt and timing.json.
    Init(InitArgs),
    /// Score solutions against ground truth; writes report.json and report.csv.
    Eval(EvalArgs),
    /// Run a grid of simulated experiments; writes sweep.csv and summary.csv.
    Sweep {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Replace the simulation noise and [sweep] table with a preset.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: Option<String>,
        /// First seed of the sweep.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct InitArgs {
    /// Dataset directory holding imu.csv and keyframes.txt.
    #[arg(long, value_name = "DIR", required_unless_present = "imu", conflicts_with_all = ["imu", "keyframes"])]
    data: Option<PathBuf>,
    /// IMU CSV (EuRoC layout).
    #[arg(long, value_name = "PATH", requires = "keyframes")]
    imu: Option<PathBuf>,
    /// Up-to-scale camera trajectory (TUM layout).
    #[arg(long, value_name = "PATH", requires = "imu")]
    keyframes: Option<PathBuf>,
    /// Output directory; defaults to the dataset directory.
    #[arg(long, value_name = "DIR", required_unless_present = "data")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Run directories holding solution.json next to groundtruth.txt, and
    /// optionally truth.json and keyframes.txt. Several give a median row.
    #[arg(value_name = "RUN_DIR", required_unless_present = "solution")]
    runs: Vec<PathBuf>,
    #[arg(long, value_name = "PATH", conflicts_with = "runs", requires = "groundtruth")]
    solution: Option<PathBuf>,
    /// Metric camera poses (TUM layout).
    #[arg(long, value_name = "PATH", requires = "solution")]
    groundtruth: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "solution")]
    truth: Option<PathBuf>,
    /// The trajectory fed to `init`, to score the raw orientations.
    #[arg(long, value_name = "PATH", requires = "solution")]
    observations: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?.0,
        None => Config::default(),
    };
    match cli.command {
        Command::Simulate { out, seed } => {
            if let Some(seed) = seed {
                config.simulation.seed = seed;
            }
            cmd_simulate(&config, &out)?;
        }
        Command::Init(args) => {
            let (imu, keyframes, out) = match args.data {
                Some(dir) => {
                    let paths = DatasetPaths::in_dir(&dir);
                    (paths.imu, paths.keyframes, args.out.unwrap_or(dir))
                }
                None => (
                    args.imu.expect("clap requires --imu"),
                    args.keyframes.expect("clap requires --keyframes"),
                    args.out.expect("clap requires --out"),
                ),
            };
            cmd_init(&config, &imu, &keyframes, &out)?;
        }
        Command::Eval(args) => {
            let runs: Vec<(String, EvalSources)> = match args.solution {
                Some(solution) => vec![(
                    run_name(solution.parent().unwrap_or(Path::new("."))),
                    EvalSources {
                        solution,
                        groundtruth: args.groundtruth.expect("clap requires --groundtruth"),
                        truth: args.truth,
                        observations: args.observations,
                    },
                )],
                None => args.runs.iter().map(|d| (run_name(d), EvalSources::in_dir(d))).collect(),
            };
            cmd_eval(&config, &runs, &args.out)?;
        }
        Command::Sweep { out, preset, seed } => {
            if let Some(name) = preset {
                apply_preset(&mut config, &name)?;
            }
            if let (Some(seed), Some(sweep)) = (seed, config.sweep.as_mut()) {
                sweep.seed_start = seed;
            }
            cmd_sweep(&config, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
