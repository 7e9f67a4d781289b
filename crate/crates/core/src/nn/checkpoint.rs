//! Checkpoint format: a JSON manifest plus a flat little-endian 32-bit
//! parameter blob. The manifest lists every tensor in blob order with its
//! name, shape and kind, so loaders can verify layout compatibility and
//! tell domain-specific normalization parameters from shared weights.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Weights shared between both domains.
    Shared,
    /// Source-domain normalization affine.
    BnSource,
    /// Target-domain normalization affine.
    BnTarget,
    /// Source-domain running statistics (not learned).
    BufferSource,
    /// Target-domain running statistics (not learned).
    BufferTarget,
}

/// One tensor to persist.
pub struct StateEntry<'a, T: Real> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
    pub param_shapes: Vec<TensorMeta>,
}

fn manifest_path(stem: &Path) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn blob_path(stem: &Path) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(".raw");
    PathBuf::from(p)
}

/// Writes `<stem>.json` + `<stem>.raw`. `extra` carries network-specific
/// manifest fields (component, epoch, arch, ...).
pub fn save_state<T: Real>(
    stem: &Path,
    extra: serde_json::Map<String, serde_json::Value>,
    entries: &[StateEntry<'_, T>],
) -> Result<()> {
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let manifest = Manifest {
        extra,
        param_shapes: entries
            .iter()
            .map(|e| TensorMeta {
                name: e.name.clone(),
                kind: e.kind,
                shape: e.shape.clone(),
            })
            .collect(),
    };
    let mp = manifest_path(stem);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: mp.clone(),
        message: e.to_string(),
    })?;
    fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
    let total: usize = entries.iter().map(|e| e.data.len()).sum();
    let mut blob = Vec::with_capacity(total * 4);
    for e in entries {
        debug_assert_eq!(e.shape.iter().product::<usize>(), e.data.len());
        for v in e.data {
            blob.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    let bp = blob_path(stem);
    fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))?;
    Ok(())
}

/// A loaded checkpoint: manifest plus per-tensor data in blob order.
pub struct LoadedState {
    pub manifest: Manifest,
    pub tensors: Vec<(TensorMeta, Vec<f32>)>,
}

impl LoadedState {
    /// Copies the tensor with this exact name into `dst`, verifying length.
    pub fn copy_into<T: Real>(&self, name: &str, dst: &mut [T]) -> Result<()> {
        let (meta, data) = self
            .tensors
            .iter()
            .find(|(m, _)| m.name == name)
            .ok_or_else(|| Error::Incompatible {
                fields: vec![format!("missing tensor `{name}`")],
            })?;
        if data.len() != dst.len() {
            return Err(Error::Incompatible {
                fields: vec![format!(
                    "tensor `{name}` has {} values, expected {} (shape {:?})",
                    data.len(),
                    dst.len(),
                    meta.shape
                )],
            });
        }
        for (d, &s) in dst.iter_mut().zip(data) {
            *d = T::of_f32(s);
        }
        Ok(())
    }
}

pub fn load_state(stem: &Path) -> Result<LoadedState> {
    let mp = manifest_path(stem);
    let bytes = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: mp.clone(),
        message: e.to_string(),
    })?;
    let bp = blob_path(stem);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let expected: usize = manifest
        .param_shapes
        .iter()
        .map(|m| m.shape.iter().product::<usize>() * 4)
        .sum();
    if blob.len() != expected {
        return Err(Error::Truncated {
            path: bp,
            expected: expected as u64,
            found: blob.len() as u64,
        });
    }
    let mut tensors = Vec::with_capacity(manifest.param_shapes.len());
    let mut offset = 0usize;
    for meta in &manifest.param_shapes {
        let len = meta.shape.iter().product::<usize>();
        let data: Vec<f32> = blob[offset..offset + len * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += len * 4;
        tensors.push((meta.clone(), data));
    }
    Ok(LoadedState { manifest, tensors })
}
