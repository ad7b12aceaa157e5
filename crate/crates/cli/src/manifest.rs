//! Per-run provenance record: resolved config, seeds, files and hashes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::defaults::Defaults;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub config: serde_json::Value,
    pub defaults: Defaults,
    pub seeds: Vec<u64>,
    pub threads: Option<usize>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub duration_secs: f64,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects a run's provenance while the command executes.
pub struct Recorder {
    command: String,
    defaults: Defaults,
    threads: Option<usize>,
    started: Instant,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, defaults: &Defaults, threads: Option<usize>) -> Self {
        Recorder {
            command: command.to_string(),
            defaults: defaults.clone(),
            threads,
            started: Instant::now(),
            config: serde_json::Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, value: impl Serialize) {
        self.config = serde_json::to_value(value).expect("config serializes");
    }

    pub fn seed(&mut self, seed: u64) {
        self.seeds.push(seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn artifacts(paths: &[PathBuf]) -> anyhow::Result<Vec<Artifact>> {
        paths
            .iter()
            .filter(|p| p.is_file())
            .map(|p| {
                Ok(Artifact {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    }

    /// Hashes every recorded file and writes the manifest to `path`.
    pub fn finish(self, path: &Path) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: self.config,
            defaults: self.defaults,
            seeds: self.seeds,
            threads: self.threads,
            inputs: Self::artifacts(&self.inputs)?,
            outputs: Self::artifacts(&self.outputs)?,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Manifest location for a run that writes a single file.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Manifest location for a run that writes a directory.
pub fn inside(dir: &Path) -> PathBuf {
    dir.join("run-manifest.json")
}
