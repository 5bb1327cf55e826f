//! `manifest.json`: every artifact a command wrote, with its size and
//! SHA-256, sorted by path relative to the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use windsr_core::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let hex = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((bytes.len() as u64, hex))
}

impl Manifest {
    /// Hashes `files` (absolute or relative to `out`).
    pub fn build(command: &str, out: &Path, files: &[PathBuf]) -> Result<Self> {
        let mut artifacts = files
            .iter()
            .map(|f| {
                let (bytes, sha256) = sha256_file(f)?;
                let rel = f.strip_prefix(out).unwrap_or(f);
                Ok(Artifact {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    bytes,
                    sha256,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        artifacts.dedup_by(|a, b| a.path == b.path);
        Ok(Manifest {
            command: command.to_string(),
            artifacts,
        })
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn get(&self, rel: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == rel)
    }
}
