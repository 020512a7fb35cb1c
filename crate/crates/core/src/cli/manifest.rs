use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// `manifest.json` of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// SHA-256 of every output file, keyed by file name.
    pub output_sha256: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn now() -> String {
    chrono::Local::now().to_rfc3339()
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args,
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            output_sha256: BTreeMap::new(),
            started: now(),
            finished: String::new(),
        }
    }

    /// Hashes the outputs, stamps the end time and writes the manifest.
    pub fn finish(&mut self, dir: &Path) -> std::io::Result<()> {
        for p in &self.outputs {
            let digest = Sha256::digest(std::fs::read(p)?);
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            self.output_sha256.insert(name, format!("{digest:x}"));
        }
        self.finished = now();
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text)
    }

    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
