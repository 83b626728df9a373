//! Config-driven runner for the spectral laboratory.

pub mod config;
pub mod run;

use std::path::{Path, PathBuf};
use std::time::Instant;

use maglab::{Error, ErrorClass, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::ExperimentConfig;
use run::{execute, Artifact, Outputs};

pub const QUARANTINE: &str = "quarantine";

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Run metadata; the only file with wall-clock content.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub status: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub versions: Versions,
    pub started_unix: u64,
    pub wall_time_seconds: f64,
    pub outputs: Vec<OutputRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub maglab: String,
    pub maglab_cli: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Numerical => 3,
        ErrorClass::Hypothesis => 4,
    }
}

/// Runs `cfg` and writes its artifacts plus `manifest.json` under `dir`.
/// On failure the artifacts completed so far and the manifest go to
/// `dir/quarantine` and the error is returned.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    let started = Instant::now();
    let started_unix =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut out = Outputs::default();
    let result = execute(cfg, &mut out);
    let (target, status, error) = match &result {
        Ok(()) => (dir.to_path_buf(), "ok", None),
        Err(e) => (dir.join(QUARANTINE), "failed", Some(format!("{}: {e}", cfg.experiment.name()))),
    };
    let kept: Vec<&Artifact> =
        out.items.iter().filter(|a| a.format.is_none_or(|f| cfg.output.formats.contains(&f))).collect();
    let outputs = write_artifacts(&target, &kept)?;
    let manifest = Manifest {
        experiment: cfg.experiment.name().to_string(),
        status: status.to_string(),
        config_sha256: sha256_hex(cfg.canonical()?.as_bytes()),
        master_seed: cfg.compute.master_seed,
        versions: Versions { maglab: maglab::VERSION.to_string(), maglab_cli: env!("CARGO_PKG_VERSION").to_string() },
        started_unix,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        outputs,
        error,
    };
    std::fs::write(target.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    result.map(|()| manifest)
}

fn write_artifacts(dir: &Path, items: &[&Artifact]) -> Result<Vec<OutputRecord>> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(items.len());
    for a in items {
        let path: PathBuf = dir.join(&a.name);
        std::fs::write(&path, &a.bytes)?;
        records.push(OutputRecord { file: a.name.clone(), sha256: sha256_hex(&a.bytes), bytes: a.bytes.len() });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Convergence { iterations: 1, residual: 1.0 }), 3);
        assert_eq!(exit_code(&Error::Precondition("x".into())), 4);
    }
}
