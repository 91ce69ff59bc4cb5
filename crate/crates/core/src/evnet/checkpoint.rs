//! Parameter container: magic, manifest length (u64 LE), JSON manifest, then
//! little-endian `f32` payloads at the offsets the manifest lists.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, EvNetConfig, Params};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EVCNET01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset from the start of the payload section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: EvNetConfig,
    pub config_hash: String,
    pub tensors: BTreeMap<String, TensorEntry>,
}

pub fn save_checkpoint(params: &Params, cfg: &EvNetConfig, path: &Path) -> Result<()> {
    let mut tensors = BTreeMap::new();
    let mut payload = Vec::with_capacity(params.num_values() * 4);
    for (name, shape, values) in params.named() {
        tensors.insert(
            name,
            TensorEntry {
                shape,
                dtype: "float32".into(),
                offset: payload.len(),
            },
        );
        for &v in values {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        config: cfg.clone(),
        config_hash: cfg.layout_hash(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&payload);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn split(bytes: &[u8], path: &Path) -> Result<(Manifest, usize)> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(path, "manifest length exceeds file size"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..end])
        .map_err(|e| Error::format(path, format!("manifest is not valid JSON: {e}")))?;
    Ok((manifest, end))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split(&bytes, path)?.0)
}

/// Load parameters. With `expected`, the stored layout hash must match it.
pub fn load_checkpoint(path: &Path, expected: Option<&EvNetConfig>) -> Result<(Params, EvNetConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (manifest, start) = split(&bytes, path)?;
    if manifest.config_hash != manifest.config.layout_hash() {
        return Err(Error::Config(format!(
            "{}: stored config hash does not match stored config",
            path.display()
        )));
    }
    if let Some(cfg) = expected {
        if cfg.layout_hash() != manifest.config_hash {
            return Err(Error::Config(format!(
                "{}: checkpoint was built for a different network configuration",
                path.display()
            )));
        }
    }
    let cfg = manifest.config.clone();
    let mut params = init_params(&cfg)?;
    let payload = &bytes[start..];
    for (name, values) in params.named_mut() {
        let entry = manifest
            .tensors
            .get(&name)
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        if entry.dtype != "float32" {
            return Err(Error::format(path, format!("{name}: unsupported dtype {}", entry.dtype)));
        }
        let n: usize = entry.shape.iter().product();
        if n != values.len() {
            return Err(Error::format(path, format!("{name}: shape {:?} does not fit the network", entry.shape)));
        }
        let chunk = payload
            .get(entry.offset..entry.offset + 4 * n)
            .ok_or_else(|| Error::Truncated {
                path: path.to_path_buf(),
                expected: start + entry.offset + 4 * n,
                found: bytes.len(),
            })?;
        for (v, b) in values.iter_mut().zip(chunk.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64;
        }
    }
    Ok((params, cfg))
}
