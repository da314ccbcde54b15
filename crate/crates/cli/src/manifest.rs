//! Run manifests: resolved config, seeds, input/artifact checksums, timings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use twindrop::twin::sha256_hex;
use twindrop::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub software: String,
    pub command: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    /// File path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
    /// Stage → wall-clock seconds. Not part of the reproducible output.
    pub timings: BTreeMap<String, f64>,
    #[serde(skip)]
    started: Option<Instant>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            software: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config: config.clone(),
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
            started: Some(Instant::now()),
        }
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.config.output.dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sum = file_sha256(path)?;
        self.inputs.insert(path.to_string_lossy().into_owned(), sum);
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let sum = file_sha256(path)?;
        let key = self.key(path);
        self.artifacts.insert(key, sum);
        Ok(())
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        *self.timings.entry(stage.to_string()).or_default() += seconds;
    }

    /// Writes `manifest_<command>.json` into the output directory, so each
    /// stage of a pipeline keeps its own record.
    pub fn write(mut self) -> Result<PathBuf> {
        if let Some(t) = self.started.take() {
            self.time("total", t.elapsed().as_secs_f64());
        }
        let path = self.config.output.dir.join(format!("manifest_{}.json", self.command));
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}
