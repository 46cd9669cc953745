//! Experiment orchestration: config in, artifacts and a checksummed manifest out.

pub mod config;
pub mod pipelines;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub use config::{ExperimentConfig, ExperimentKind, OutputFormat};
pub use pipelines::{run_cell, CellEstimate, CellOutcome, CellResult};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const CONFIG_NAME: &str = "config.toml";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Some sweep cells failed; their errors are in the cell files.
    Partial,
    /// Every sweep cell failed.
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub stage: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub status: RunStatus,
    pub failed_cells: usize,
    /// Effective config with defaults resolved.
    pub config: ExperimentConfig,
    pub outputs: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.manifest.status {
            RunStatus::Complete => EXIT_OK,
            RunStatus::Partial => EXIT_PARTIAL,
            RunStatus::Failed => EXIT_NUMERICAL,
        }
    }
}

/// Exit status for a finished or failed run: errors before any pipeline
/// stage ran are validation errors.
pub fn exit_code(r: &Result<RunOutcome>) -> i32 {
    match r {
        Ok(o) => o.exit_code(),
        Err(Error::Stage { .. }) => EXIT_NUMERICAL,
        Err(_) => EXIT_VALIDATION,
    }
}

/// Output sink that remembers which stage wrote each file.
pub struct Artifacts {
    dir: PathBuf,
    produced: Vec<(String, String)>,
}

impl Artifacts {
    fn new(dir: &Path) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
            produced: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record(&mut self, stage: &str, name: &str) {
        self.produced.push((name.to_string(), stage.to_string()));
    }

    pub fn write(&mut self, stage: &str, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes).map_err(|e| e.in_stage(stage))?;
        self.record(stage, name);
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, stage: &str, name: &str, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value).map_err(|e| Error::from(e).in_stage(stage))?;
        buf.push(b'\n');
        self.write(stage, name, &buf)
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Loads, validates and runs a config file.
pub fn run(path: &Path) -> Result<RunOutcome> {
    run_with(path, &[])
}

/// As [`run`], with `key.path=value` overrides applied before validation.
pub fn run_with(path: &Path, overrides: &[String]) -> Result<RunOutcome> {
    run_config(ExperimentConfig::load(path, overrides)?)
}

pub fn run_config(cfg: ExperimentConfig) -> Result<RunOutcome> {
    let cfg = cfg.resolve()?;
    let started = now_ms();
    let dir = cfg.out_dir.clone();
    let mut out = Artifacts::new(&dir);
    out.write("config", CONFIG_NAME, cfg.to_toml_string().as_bytes())?;
    use ExperimentKind::*;
    let sweep = match cfg.kind {
        SynthPhases => pipelines::synth_phases(&cfg, &mut out).map(|_| None),
        SimulateLaser => pipelines::simulate_laser(&cfg, &mut out).map(|_| None),
        Visibility => pipelines::visibility(&cfg, &mut out).map(|_| None),
        Calibrate => pipelines::calibrate_kind(&cfg, &mut out).map(|_| None),
        EstimateQ => pipelines::estimate_q_kind(&cfg, &mut out).map(|_| None),
        Fig3 => pipelines::fig3(&cfg, &mut out).map(|_| None),
        Table1 | Table2 => pipelines::tables(&cfg, &mut out).map(Some),
        Fig4 => pipelines::fig4(&cfg, &mut out).map(Some),
    };
    // Config-level problems found while a stage is running still count as
    // validation errors.
    let sweep = sweep.map_err(|e| match e {
        Error::Stage { .. } => e,
        Error::Config { .. } => e,
        other => other.in_stage(cfg.kind.name()),
    })?;
    let (status, failed) = match &sweep {
        None => (RunStatus::Complete, 0),
        Some(s) if s.failed() == 0 => (RunStatus::Complete, 0),
        Some(s) if s.failed() == s.cells.len() => (RunStatus::Failed, s.failed()),
        Some(s) => (RunStatus::Partial, s.failed()),
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: cfg.kind,
        seed: cfg.seed,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        status,
        failed_cells: failed,
        outputs: checksum_dir(&dir, &out.produced).map_err(|e| e.in_stage("manifest"))?,
        config: cfg,
    };
    let mut buf = serde_json::to_vec_pretty(&manifest)?;
    buf.push(b'\n');
    write_atomic(&dir.join(MANIFEST_NAME), &buf).map_err(|e| e.in_stage("manifest"))?;
    Ok(RunOutcome { out_dir: dir, manifest })
}

/// Checksums every file under `dir` except the manifest, sorted by path.
/// Files this run did not write are listed with stage `preexisting`.
fn checksum_dir(dir: &Path, produced: &[(String, String)]) -> Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.retain(|p| p != MANIFEST_NAME);
    files.sort();
    files
        .into_iter()
        .map(|rel| {
            let path = dir.join(&rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let stage = produced
                .iter()
                .find(|(name, _)| *name == rel)
                .map(|(_, s)| s.clone())
                .unwrap_or_else(|| "preexisting".to_string());
            Ok(ManifestEntry {
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
                path: rel,
                stage,
            })
        })
        .collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walked below root");
            let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(parts.join("/"));
        }
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests;
