//! Batch front end: simulate datasets, run the initializer, score results
//! and sweep experiment grids.

pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;
pub mod sweep;

pub use commands::{cmd_eval, cmd_init, cmd_simulate, EvalSources};
pub use error::{CliError, Result};
pub use sweep::{apply_preset, cmd_sweep};
