//! `manifest.json`: the resolved configuration, input hashes and per-run
//! outcomes, enough to rerun a result and check it bit for bit.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vibrancy_core::signatures::DayType;

use crate::config::{Level, PipelineConfig};
use crate::error::{CliError, Result, Stage};
use crate::tables;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_FILE: &str = "FAILED";

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = tables::open(Stage::Manifest, path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(Stage::Manifest, path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Hash of every regular file directly inside `dir`, keyed by file name.
pub fn hash_dir(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(Stage::Manifest, dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(Stage::Manifest, dir, e))?;
        let path = entry.path();
        if path.is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned(), sha256_file(&path)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub level: Level,
    pub day_type: DayType,
    /// Region name for local runs, `all` for the global run.
    pub scope: String,
    /// Result directory relative to the output root.
    pub dir: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_k: Option<usize>,
    /// Seed of the restart kept for each k.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kept_seeds: BTreeMap<usize, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit_converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    /// sha256 of every input file, keyed by absolute path.
    pub inputs: BTreeMap<String, String>,
    pub runs: Vec<RunRecord>,
}

impl Manifest {
    pub fn hash_inputs(cfg: &PipelineConfig) -> Result<BTreeMap<String, String>> {
        cfg.input_files()
            .into_iter()
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        tables::read_json(Stage::Manifest, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        tables::write_json(Stage::Manifest, path, self)
    }

    /// Fails with a data error when any input no longer matches its hash.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, expected) in &self.inputs {
            let p = Path::new(path);
            if !p.is_file() {
                return Err(CliError::data(Stage::Manifest, format!("input {path} is missing")));
            }
            let found = sha256_file(p)?;
            if &found != expected {
                return Err(CliError::data(
                    Stage::Manifest,
                    format!(
                        "input {path} changed since the manifest was written (sha256 {found}, expected {expected})"
                    ),
                ));
            }
        }
        Ok(())
    }
}
