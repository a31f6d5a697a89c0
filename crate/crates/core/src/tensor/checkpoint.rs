//! Array checkpoints: a JSON manifest listing `(name, shape, dtype,
//! offset)` per array next to one little-endian blob.
//!
//! `<stem>.json` holds the manifest and `<stem>.bin` the raw values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ParamSet, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub blob: String,
    pub arrays: Vec<ArrayEntry>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn save_checkpoint<F: Real>(stem: &Path, arrays: &[(String, Tensor<F>)]) -> Result<CheckpointManifest> {
    let (manifest_path, blob_path) = paths(stem);
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(arrays.len());
    for (name, t) in arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: F::DTYPE.to_string(),
            offset: blob.len(),
        });
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    let manifest = CheckpointManifest {
        blob: blob_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        arrays: entries,
    };
    if let Some(parent) = manifest_path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&blob_path, &blob)?;
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint<F: Real>(stem: &Path) -> Result<Vec<(String, Tensor<F>)>> {
    let (manifest_path, _) = paths(stem);
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    let blob_path = manifest_path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_path)?;
    let mut out = Vec::with_capacity(manifest.arrays.len());
    for e in &manifest.arrays {
        if e.dtype != F::DTYPE {
            return Err(Error::Checkpoint(format!(
                "array `{}` is {}, expected {}",
                e.name,
                e.dtype,
                F::DTYPE
            )));
        }
        let numel: usize = e.shape.iter().product();
        let end = e.offset + numel * F::BYTES;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!("array `{}` runs past the blob end", e.name)));
        }
        let data = blob[e.offset..end].chunks_exact(F::BYTES).map(F::read_le).collect();
        out.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    Ok(out)
}

/// Looks up an array by name.
pub fn find_array<'a, F>(arrays: &'a [(String, Tensor<F>)], name: &str) -> Result<&'a Tensor<F>> {
    arrays
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
}

/// Overwrites every parameter in `params` with the same-named array.
pub fn load_params<F: Real>(params: &mut ParamSet<F>, arrays: &[(String, Tensor<F>)]) -> Result<()> {
    for (name, dst) in params.iter_mut() {
        let src = find_array(arrays, name)?;
        if src.shape() != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "array `{name}` has shape {:?}, expected {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}
