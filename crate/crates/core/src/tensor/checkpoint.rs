//! Checkpoint file pair: `<base>.manifest.json` lists parameter names,
//! shapes and run metadata; `<base>.weights.bin` holds the little-endian
//! f32 values of every parameter concatenated in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ModelParameters, Tensor};
use crate::error::{CheckpointError, Result};

const FORMAT: &str = "voxdep-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// Run metadata stored alongside the weights.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: String,
    pub seed: u64,
    #[serde(default)]
    pub hyperparameters: IndexMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    #[serde(flatten)]
    meta: CheckpointMeta,
    step: u64,
    parameters: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParameters<f32>,
}

pub fn manifest_path(base: &Path) -> PathBuf {
    with_suffix(base, ".manifest.json")
}

pub fn weights_path(base: &Path) -> PathBuf {
    with_suffix(base, ".weights.bin")
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn save_checkpoint(params: &ModelParameters<f32>, meta: &CheckpointMeta, base: &Path) -> Result<()> {
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        meta: meta.clone(),
        step: params.step(),
        parameters: params
            .entries()
            .map(|(name, e)| ManifestEntry {
                name: name.to_string(),
                shape: e.tensor.shape().to_vec(),
                trainable: e.trainable,
            })
            .collect(),
    };
    let mut blob = Vec::with_capacity(4 * params.entries().map(|(_, e)| e.tensor.len()).sum::<usize>());
    for (_, e) in params.entries() {
        for v in e.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mpath = manifest_path(base);
    if let Some(dir) = mpath.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    }
    fs::write(&mpath, text + "\n").map_err(|e| crate::Error::io(&mpath, e))?;
    let wpath = weights_path(base);
    fs::write(&wpath, blob).map_err(|e| crate::Error::io(&wpath, e))?;
    Ok(())
}

pub fn load_checkpoint(base: &Path) -> Result<Checkpoint> {
    let mpath = manifest_path(base);
    let text = fs::read_to_string(&mpath).map_err(|source| CheckpointError::Unreadable {
        path: mpath.clone(),
        source,
    })?;
    let corrupt = |detail: String| CheckpointError::CorruptManifest {
        path: mpath.clone(),
        detail,
    };
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(corrupt(format!("unsupported format {} v{}", manifest.format, manifest.version)).into());
    }
    let mut seen = std::collections::HashSet::new();
    for p in &manifest.parameters {
        if p.shape.is_empty() || p.shape.contains(&0) {
            return Err(corrupt(format!("parameter `{}` has invalid shape {:?}", p.name, p.shape)).into());
        }
        if !seen.insert(p.name.as_str()) {
            return Err(corrupt(format!("parameter `{}` listed twice", p.name)).into());
        }
    }

    let wpath = weights_path(base);
    let blob = fs::read(&wpath).map_err(|source| CheckpointError::Unreadable { path: wpath, source })?;
    let expected: usize = manifest
        .parameters
        .iter()
        .map(|p| 4 * p.shape.iter().product::<usize>())
        .sum();
    if expected != blob.len() {
        return Err(CheckpointError::SizeMismatch {
            expected,
            actual: blob.len(),
        }
        .into());
    }

    let mut params = ModelParameters::new();
    let mut offset = 0;
    for p in manifest.parameters {
        let n: usize = p.shape.iter().product();
        let data = blob[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        offset += 4 * n;
        params.insert(p.name, Tensor::new(p.shape, data)?, p.trainable);
    }
    params.step = manifest.step;
    Ok(Checkpoint {
        meta: manifest.meta,
        params,
    })
}
