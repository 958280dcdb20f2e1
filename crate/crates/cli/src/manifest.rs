use crate::error::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record written beside the outputs of every file-producing run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub parameters: serde_json::Value,
    pub tool_version: String,
    pub wall_time_seconds: f64,
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Collects paths while a command runs, then writes the manifest.
pub struct Recorder {
    subcommand: &'static str,
    started: Instant,
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub parameters: serde_json::Value,
}

impl Recorder {
    pub fn new(subcommand: &'static str) -> Self {
        Recorder {
            subcommand,
            started: Instant::now(),
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            parameters: serde_json::Value::Null,
        }
    }

    /// Writes `contents` to `path` and records it as an output.
    pub fn write(&mut self, path: PathBuf, contents: &[u8]) -> Result<(), CliError> {
        std::fs::write(&path, contents).map_err(CliError::io(&path))?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn finish(self, path: &Path) -> Result<(), CliError> {
        let mut inputs = Vec::new();
        for p in self.config.iter().chain(&self.inputs) {
            inputs.push(digest(p)?);
        }
        let outputs = self
            .outputs
            .iter()
            .map(|p| digest(p))
            .collect::<Result<Vec<_>, _>>()?;
        let manifest = RunManifest {
            subcommand: self.subcommand.into(),
            config: self.config.map(|p| p.display().to_string()),
            inputs,
            outputs,
            seed: self.seed,
            parameters: self.parameters,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(CliError::io(path))
    }
}
