use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the initialization toolkit.
///
/// Variants fall in two families: input errors (bad files, bad arguments,
/// violated preconditions) and numeric failures (rank deficiency, divergence).
/// [`Error::is_numeric`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not a rotation (orthonormality residual {residual:.3e})")]
    NotRotation { residual: f64 },

    #[error("need at least {required} IMU samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("timestamps not strictly increasing at sample {index} (t = {t})")]
    NonMonotonic { index: usize, t: f64 },

    #[error("IMU gap of {gap:.6} s at t = {t:.6} exceeds twice the nominal period {period:.6} s")]
    ImuGap { t: f64, gap: f64, period: f64 },

    #[error("IMU stream [{start:.6}, {end:.6}] does not cover interval [{t0:.6}, {t1:.6}]")]
    ImuCoverage { start: f64, end: f64, t0: f64, t1: f64 },

    #[error("need at least {required} keyframes, got {got}")]
    TooFewKeyframes { required: usize, got: usize },

    #[error("keyframe pair index {k} out of range for {n} keyframes")]
    PairOutOfRange { k: usize, n: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },

    #[error("innovation covariance is singular (condition number {cond:.3e})")]
    SingularInnovation { cond: f64 },

    #[error("linear system is rank deficient (rank {rank} < {unknowns}); motion lacks excitation")]
    RankDeficient { rank: usize, unknowns: usize },

    #[error("degenerate scale estimate s = {scale:.6e}")]
    DegenerateScale { scale: f64 },

    #[error("normal equations have a zero diagonal entry at column {column}")]
    DegenerateWeights { column: usize },

    #[error("iterate diverged: {0}")]
    Divergence(String),

    #[error("degenerate point set for alignment: {0}")]
    DegenerateAlignment(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularInnovation { .. }
                | Error::RankDeficient { .. }
                | Error::DegenerateScale { .. }
                | Error::DegenerateWeights { .. }
                | Error::Divergence(_)
                | Error::DegenerateAlignment(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
