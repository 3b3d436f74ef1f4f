//! Run manifests: what went in, what came out, and how long it took.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use viinit_core::config::Config;
use viinit_core::pipeline::StageTimings;

use crate::error::{CliError, Result};
use crate::io::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-stage wall-clock time in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub gyro_bias_us: f64,
    pub preintegration_us: f64,
    pub linear_us: f64,
    pub refine_us: f64,
    pub total_us: f64,
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

impl From<&StageTimings> for TimingRecord {
    fn from(t: &StageTimings) -> Self {
        Self {
            gyro_bias_us: micros(t.gyro_bias),
            preintegration_us: micros(t.preintegration),
            linear_us: micros(t.linear),
            refine_us: micros(t.refine),
            total_us: micros(t.total()),
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Config,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_us: Option<TimingRecord>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            seeds: Vec::new(),
            timings_us: None,
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.outputs.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}
