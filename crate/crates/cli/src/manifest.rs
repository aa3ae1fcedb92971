//! Run manifests: everything needed to replay a command bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use enkbf_core::Variant;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModelConfig, SpsaFileConfig, StudyConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

/// A fully resolved command, ready to execute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Invocation {
    Simulate {
        config: ModelConfig,
    },
    Filter {
        config: ModelConfig,
        data: PathBuf,
        variant: Variant,
        particles: usize,
        pinv_tol: Option<f64>,
        emit_cov: bool,
    },
    MseStudy {
        config: StudyConfig,
    },
    Spsa {
        config: SpsaFileConfig,
        data: Option<PathBuf>,
    },
    Plot {
        input: PathBuf,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Simulate { .. } => "simulate",
            Invocation::Filter { .. } => "filter",
            Invocation::MseStudy { .. } => "mse-study",
            Invocation::Spsa { .. } => "spsa",
            Invocation::Plot { .. } => "plot",
        }
    }

    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Invocation::Filter { data, .. } => vec![data.as_path()],
            Invocation::Spsa { data: Some(d), .. } => vec![d.as_path()],
            Invocation::Plot { input } => vec![input.as_path()],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    /// Master seed and every derived stream root, by role.
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<PathBuf>,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(MANIFEST_SUFFIX);
    out.with_file_name(name)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(invocation: Invocation, seeds: BTreeMap<String, u64>, outputs: Vec<PathBuf>) -> CliResult<Self> {
        let inputs = invocation
            .inputs()
            .into_iter()
            .map(|p| {
                Ok(InputRecord {
                    path: p.to_path_buf(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            seeds,
            inputs,
            outputs,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        crate::config::load(path)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        crate::io::write_text(path, &(text + "\n"))
    }

    /// Fails if an input changed since the manifest was written.
    pub fn verify_inputs(&self) -> CliResult<()> {
        for rec in &self.inputs {
            let now = sha256_file(&rec.path)?;
            if now != rec.sha256 {
                return Err(CliError::Data(format!(
                    "{} changed since the run was recorded (sha256 {} != {})",
                    rec.path.display(),
                    now,
                    rec.sha256
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(manifest_path(Path::new("out/a.csv")), PathBuf::from("out/a.csv.manifest.json"));
    }

    #[test]
    fn invocation_round_trips_through_json() {
        let inv = Invocation::Plot {
            input: PathBuf::from("x.csv"),
        };
        let text = serde_json::to_string(&inv).unwrap();
        assert!(text.contains("\"command\":\"plot\""));
        assert_eq!(serde_json::from_str::<Invocation>(&text).unwrap(), inv);
    }
}
