//! Run manifests and per-artifact fingerprint sidecars.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hash_file(path)?,
        })
    }
}

/// Hash of the command name, the semantic config and the input contents.
pub fn fingerprint(command: &str, cfg: &PipelineConfig, inputs: &[FileHash]) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(&cfg.semantic()).expect("config serializes"));
    for input in inputs {
        h.update([0]);
        h.update(input.sha256.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Written next to every artifact as `<artifact>.fingerprint.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub fingerprint: String,
    pub command: String,
    pub sha256: String,
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut p = artifact.as_os_str().to_owned();
    p.push(".fingerprint.json");
    PathBuf::from(p)
}

pub fn write_sidecar(artifact: &Path, command: &str, fingerprint: &str) -> Result<(), CliError> {
    let sidecar = Sidecar {
        fingerprint: fingerprint.to_string(),
        command: command.to_string(),
        sha256: hash_file(artifact)?,
    };
    write_json(&sidecar_path(artifact), &sidecar)
}

/// True when every artifact exists, is unmodified, and was produced under
/// `fingerprint`.
pub fn up_to_date(artifacts: &[PathBuf], fingerprint: &str) -> bool {
    !artifacts.is_empty()
        && artifacts.iter().all(|a| {
            let Ok(text) = std::fs::read_to_string(sidecar_path(a)) else {
                return false;
            };
            let Ok(sidecar) = serde_json::from_str::<Sidecar>(&text) else {
                return false;
            };
            sidecar.fingerprint == fingerprint && hash_file(a).is_ok_and(|h| h == sidecar.sha256)
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub fingerprint: String,
    pub config: PipelineConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub duration_s: f64,
    /// Outputs were already current and nothing was recomputed.
    pub skipped: bool,
}

impl Manifest {
    /// `<primary output>.manifest.json`, or `manifest.json` inside an output
    /// directory.
    pub fn path_for(primary: &Path) -> PathBuf {
        if primary.is_dir() {
            primary.join("manifest.json")
        } else {
            let mut p = primary.as_os_str().to_owned();
            p.push(".manifest.json");
            PathBuf::from(p)
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
