//! Output directory bookkeeping and the hashed manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use dnls_core::io::round_sig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
/// Significant digits of floats in CSV and summary JSON artifacts.
pub const SIG_DIGITS: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    ConfigError,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub status: RunStatus,
    /// True only when every artifact of the command was written.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(dir.join(MANIFEST)).map_err(|e| io_err(&dir.join(MANIFEST), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{MANIFEST}: {e}")))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

/// Rounds every float in `v` to [`SIG_DIGITS`] significant digits.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig(x, SIG_DIGITS)))
            .map_or(Value::Null, Value::Number),
        Value::Array(items) => Value::Array(items.into_iter().map(round_floats).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// A fresh output directory and the files written into it.
pub struct ArtifactDir {
    root: PathBuf,
    files: BTreeSet<String>,
}

impl ArtifactDir {
    /// Creates `root`, refusing one that already has entries.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        if root.exists() {
            let mut entries = fs::read_dir(root).map_err(|e| io_err(root, e))?;
            if entries.next().is_some() {
                return Err(CliError::Config(format!(
                    "output directory {} is not empty; choose another with --out",
                    root.display()
                )));
            }
        }
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeSet::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers a file that something else wrote under the root.
    pub fn record(&mut self, rel: &str) {
        self.files.insert(rel.to_string());
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.record(rel);
        Ok(())
    }

    /// Pretty JSON with floats rounded to [`SIG_DIGITS`] digits.
    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<(), CliError> {
        let v = serde_json::to_value(value).map_err(|e| CliError::Config(format!("{rel}: {e}")))?;
        let mut text = serde_json::to_string_pretty(&round_floats(v)).expect("a Value always serializes");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Hashes the recorded files and writes the manifest last.
    pub fn finish(&mut self, command: &str, outcome: &Result<(), CliError>) -> Result<Manifest, CliError> {
        let mut files = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let path = self.root.join(rel);
            let Ok(bytes) = fs::read(&path) else {
                continue;
            };
            files.push(ManifestEntry {
                path: rel.clone(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        let (status, error) = match outcome {
            Ok(()) => (RunStatus::Ok, None),
            Err(e @ CliError::Config(_)) => (RunStatus::ConfigError, Some(e.to_string())),
            Err(e @ CliError::Numerical(_)) => (RunStatus::NumericalFailure, Some(e.to_string())),
        };
        let manifest = Manifest {
            command: command.to_string(),
            complete: status == RunStatus::Ok,
            status,
            error,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.root.join(MANIFEST);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(manifest)
    }
}
