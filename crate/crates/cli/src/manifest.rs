use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use iqsei::{fsutil, Result};
use serde::{Deserialize, Serialize};

/// Record of one artifact-producing run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// The fully resolved configuration.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub threads: usize,
    pub deterministic: bool,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &impl Serialize, threads: usize, deterministic: bool) -> Result<Self> {
        Ok(ManifestBuilder {
            manifest: RunManifest {
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                config: serde_json::to_value(config)?,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                threads,
                deterministic,
                started_unix_s: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                wall_clock_s: 0.0,
            },
            start: Instant::now(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.into(), value);
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    /// Stamps the duration and writes the manifest to `path`.
    pub fn write(mut self, path: &Path) -> Result<RunManifest> {
        self.manifest.wall_clock_s = self.start.elapsed().as_secs_f64();
        fsutil::write_atomic_bytes(path, &serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}

/// Manifest location for a single-file output: `data.rfpd` becomes
/// `data.manifest.json`.
pub fn manifest_for_file(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// Manifest location for a directory of outputs.
pub fn manifest_in_dir(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
