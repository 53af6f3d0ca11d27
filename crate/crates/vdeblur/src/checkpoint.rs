//! Checkpoints: a JSON manifest (config, names, shapes, byte offsets) and a
//! little-endian `f32` blob beside it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vdeblur_core::{ModelConfig, ModelParams, Shape, Tensor, Variant};

use crate::error::{CliError, CliResult};
use crate::manifest::{read_json, sha256_bytes, write_json};

pub const FORMAT: &str = "vdeblur-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: String,
    pub window_m: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub channels: usize,
    pub feature_channels: usize,
    pub input_kernel: usize,
    pub blend_kernel: usize,
    pub scale: f64,
}

impl From<&ModelConfig> for ModelSpec {
    fn from(c: &ModelConfig) -> Self {
        ModelSpec {
            variant: c.variant.name().into(),
            window_m: c.window_m,
            encoder_blocks: c.encoder_blocks,
            decoder_blocks: c.decoder_blocks,
            channels: c.channels,
            feature_channels: c.feature_channels,
            input_kernel: c.input_kernel,
            blend_kernel: c.blend_kernel,
            scale: c.scale,
        }
    }
}

impl ModelSpec {
    pub fn to_config(&self) -> CliResult<ModelConfig> {
        let variant: Variant = self.variant.parse().map_err(|e: vdeblur_core::Error| CliError::Data(e.to_string()))?;
        let config = ModelConfig {
            variant,
            window_m: self.window_m,
            encoder_blocks: self.encoder_blocks,
            decoder_blocks: self.decoder_blocks,
            channels: self.channels,
            feature_channels: self.feature_channels,
            input_kernel: self.input_kernel,
            blend_kernel: self.blend_kernel,
            scale: self.scale,
        };
        config.validate().map_err(|e| CliError::Data(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub model: ModelSpec,
    pub blob: String,
    pub blob_bytes: usize,
    pub blob_sha256: String,
    pub tensors: Vec<TensorEntry>,
    /// Whatever produced the weights: run config, seed, input hashes.
    pub provenance: serde_json::Value,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn encode(params: &ModelParams<f32>) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut blob = Vec::with_capacity(4 * params.param_count());
    let tensors = params
        .entries()
        .into_iter()
        .map(|(name, _, t)| {
            let offset = blob.len();
            blob.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            TensorEntry { name, shape: t.shape().dims().to_vec(), offset }
        })
        .collect();
    (tensors, blob)
}

pub fn save(path: &Path, params: &ModelParams<f32>, provenance: serde_json::Value) -> CliResult<CheckpointManifest> {
    let (tensors, blob) = encode(params);
    let bin = blob_path(path);
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        model: ModelSpec::from(&params.config),
        blob: bin.file_name().expect("manifest path has a file name").to_string_lossy().into_owned(),
        blob_bytes: blob.len(),
        blob_sha256: sha256_bytes(&blob),
        tensors,
        provenance,
    };
    write_json(path, &manifest)?;
    std::fs::write(&bin, &blob).map_err(CliError::io(&bin))?;
    Ok(manifest)
}

pub fn decode(manifest: &CheckpointManifest, blob: &[u8]) -> CliResult<ModelParams<f32>> {
    if manifest.format != FORMAT {
        return Err(CliError::Data(format!("unsupported checkpoint format `{}`", manifest.format)));
    }
    if blob.len() != manifest.blob_bytes || sha256_bytes(blob) != manifest.blob_sha256 {
        return Err(CliError::Data("checkpoint blob does not match its manifest".into()));
    }
    let config = manifest.model.to_config()?;
    let named = manifest
        .tensors
        .iter()
        .map(|e| {
            let shape = Shape::new(e.shape.clone());
            let end = e.offset + 4 * shape.numel();
            let bytes = blob
                .get(e.offset..end)
                .ok_or_else(|| CliError::Data(format!("tensor `{}` runs past the blob", e.name)))?;
            let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            Ok((e.name.clone(), Tensor::from_vec(shape, data)?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    ModelParams::from_named(&config, named).map_err(|e| CliError::Data(e.to_string()))
}

pub fn load(path: &Path) -> CliResult<(ModelParams<f32>, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(path)?;
    let bin = path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let blob = std::fs::read(&bin).map_err(CliError::io(&bin))?;
    Ok((decode(&manifest, &blob)?, manifest))
}
