use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    pub version: &'static str,
    pub config_hash: String,
    /// Seed of the only random stream (the Monte Carlo sampler).
    pub seed: u64,
    pub jobs: Option<usize>,
    /// Fully resolved configuration, overrides applied.
    pub config: PipelineConfig,
    /// Content hashes of the inputs (meshes, snapshot sets, artifacts).
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written, by relative path.
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
}

impl Manifest {
    pub fn new(command: &str, config: &PipelineConfig, jobs: Option<usize>) -> anyhow::Result<Self> {
        Ok(Self {
            command: command.to_string(),
            argv: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: sha256_hex(&serde_json::to_vec(config)?),
            seed: config.uq.spec.seed,
            jobs,
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            result: None,
        })
    }
}

/// Writes files below one directory and records their hashes.
pub struct Output {
    dir: PathBuf,
    manifest: Manifest,
}

impl Output {
    pub fn create(dir: &Path, manifest: Manifest) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn manifest(&mut self) -> &mut Manifest {
        &mut self.manifest
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes.as_ref()).with_context(|| format!("cannot write {}", path.display()))?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(bytes.as_ref()));
        Ok(path)
    }

    pub fn finish(self) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
