//! JSON manifests that accompany every artifact on disk.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

impl InputHash {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(InputHash { path: path.display().to_string(), sha256: sha256_file(path)? })
    }
}

pub fn hash_inputs(paths: &[PathBuf]) -> CliResult<Vec<InputHash>> {
    paths.iter().map(|p| InputHash::of(p)).collect()
}

/// Pretty JSON with a trailing newline; key order follows field order, so
/// equal values give equal bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest types serialize");
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: malformed manifest: {e}", path.display())))
}

/// One synthesized blurry/sharp pair; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub index: usize,
    pub blurry: String,
    pub sharp: String,
}

/// Written by `synth`, read by `train`, `eval` and `ablate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub tau: usize,
    pub interval: usize,
    pub source_fps: f64,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub pairs: Vec<PairEntry>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
}

impl SynthManifest {
    pub fn resolve(manifest_path: &Path, entry: &str) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(entry)
    }

    pub fn blurry_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        self.pairs.iter().map(|p| Self::resolve(manifest_path, &p.blurry)).collect()
    }

    pub fn sharp_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        self.pairs.iter().map(|p| Self::resolve(manifest_path, &p.sharp)).collect()
    }
}

/// Written by `generate` next to synthetic high-speed frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootageManifest {
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<String>,
    pub motion: serde_json::Value,
    pub config: serde_json::Value,
}

/// Accompanies frames written by `deblur`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputManifest {
    pub frames: Vec<String>,
    pub config: serde_json::Value,
    pub checkpoint: InputHash,
    pub inputs: Vec<InputHash>,
}
