//! Run manifest: config hash, seeds, versions, input digests, and wall
//! clock per stage, written once per output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use lactate_core::{Error, Result};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub core_version: String,
    pub cli_version: String,
    pub config_hash: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub input_digests: BTreeMap<String, String>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub created_unix_seconds: u64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    stage_start: Option<(String, Instant)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl ManifestBuilder {
    pub fn new(command: &str) -> ManifestBuilder {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                core_version: lactate_core_version(),
                cli_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: None,
                seeds: BTreeMap::new(),
                input_digests: BTreeMap::new(),
                stage_seconds: BTreeMap::new(),
                outputs: Vec::new(),
                created_unix_seconds: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
            stage_start: None,
        }
    }

    pub fn config_bytes(&mut self, bytes: &[u8]) {
        self.manifest.config_hash = Some(sha256_hex(bytes));
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .input_digests
            .insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    pub fn begin_stage(&mut self, name: &str) {
        self.end_stage();
        self.stage_start = Some((name.to_string(), Instant::now()));
    }

    pub fn end_stage(&mut self) {
        if let Some((name, start)) = self.stage_start.take() {
            self.manifest
                .stage_seconds
                .insert(name, start.elapsed().as_secs_f64());
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn write(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.end_stage();
        let path = out_dir.join("manifest.json");
        self.manifest.outputs.push(path.display().to_string());
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn lactate_core_version() -> String {
    // Workspace crates share one version.
    env!("CARGO_PKG_VERSION").to_string()
}
