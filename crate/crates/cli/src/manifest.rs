//! Provenance records for emitted artifacts.
//!
//! The manifest embedded in partition documents holds only inputs and
//! parameters, so repeated runs produce identical bytes. Wall-clock time
//! goes to a `run.json` sidecar next to the outputs.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::io::write_json;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub version: String,
}

impl RunManifest {
    pub fn new<P: Serialize>(subcommand: &str, params: &P, inputs: &[&Path]) -> CliResult<Self> {
        Ok(RunManifest {
            subcommand: subcommand.to_string(),
            params: serde_json::to_value(params).map_err(|e| CliError::Data(e.to_string()))?,
            inputs: inputs.iter().map(|p| digest(p)).collect::<CliResult<_>>()?,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

pub fn digest(path: &Path) -> CliResult<InputDigest> {
    let mut file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
    })
}

#[derive(Serialize)]
struct RunRecord<'a> {
    manifest: &'a RunManifest,
    duration_seconds: f64,
    outputs: Vec<String>,
}

/// Sidecar written next to `primary`: `<primary>.run.json`.
pub fn sidecar_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    primary.with_file_name(name)
}

pub fn write_run_record(path: &Path, manifest: &RunManifest, elapsed: Duration, outputs: &[PathBuf]) -> CliResult<()> {
    let record = RunRecord {
        manifest,
        duration_seconds: elapsed.as_secs_f64(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_json(path, &record)
}
