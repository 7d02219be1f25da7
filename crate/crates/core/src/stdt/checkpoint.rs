//! Checkpoint directories: `manifest.json` plus one binary file per tensor.
//!
//! Tensor file layout (little endian): magic `DFXT`, format version `u8`,
//! dtype code `u8` (1 = f32, 2 = f64), rank `u8`, one padding byte, `rank`
//! dimensions as `u64`, then the elements in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Denoiser, ModelConfig};
use super::Real;
use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DFXT";
const VERSION: u8 = 1;
pub const CHECKPOINT_FORMAT: u32 = 1;

pub fn encode_tensor<R: Real>(t: &ArrayViewD<R>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.ndim() + R::BYTES * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, R::DTYPE_CODE, t.ndim() as u8, 0]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.iter() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_tensor<R: Real>(bytes: &[u8], path: &Path) -> Result<ArrayD<R>> {
    let bad = |msg: &str| Error::Schema {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a tensor file"));
    }
    if bytes[4] != VERSION {
        return Err(bad("unsupported tensor format version"));
    }
    if bytes[5] != R::DTYPE_CODE {
        return Err(bad(&format!("dtype code {} where {} expected", bytes[5], R::DTYPE)));
    }
    let ndim = bytes[6] as usize;
    let header = 8 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count * R::BYTES {
        return Err(bad("payload length does not match shape"));
    }
    let data: Vec<R> = bytes[header..].chunks_exact(R::BYTES).map(R::read_le).collect();
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| bad(&e.to_string()))
}

pub fn write_tensor<R: Real>(path: &Path, t: &ArrayViewD<R>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor<R: Real>(path: &Path) -> Result<ArrayD<R>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub model: ModelConfig,
    pub step: u64,
    /// Digest of the state the next step's randomness derives from.
    pub rng_digest: String,
    pub tensors: Vec<TensorEntry>,
    /// Trainer-owned state (optimizer bookkeeping, stage, configs).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl CheckpointManifest {
    /// Digest over the manifest and every tensor payload digest.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("manifest serialises"));
        hex::encode(h.finalize())
    }
}

fn tensor_file(name: &str) -> String {
    format!("{name}.bin")
}

/// Write all parameters of `model` under `dir/params/` and return their
/// manifest entries.
pub fn write_params<R: Real>(dir: &Path, model: &Denoiser<R>) -> Result<Vec<TensorEntry>> {
    model
        .tensors()
        .into_iter()
        .map(|(name, t)| {
            let file = format!("params/{}", tensor_file(&name));
            let bytes = encode_tensor(&t);
            let path = dir.join(&file);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            Ok(TensorEntry {
                name,
                file,
                shape: t.shape().to_vec(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            })
        })
        .collect()
}

/// Save a model checkpoint with the given step, rng digest and trainer state.
pub fn save_checkpoint<R: Real>(
    dir: &Path,
    model: &Denoiser<R>,
    step: u64,
    rng_digest: &str,
    extra: serde_json::Value,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = write_params(dir, model)?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT,
        dtype: R::DTYPE.to_string(),
        model: model.config.clone(),
        step,
        rng_digest: rng_digest.to_string(),
        tensors,
        extra,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let m: CheckpointManifest = read_json(&path)?;
    if m.format_version != CHECKPOINT_FORMAT {
        return Err(Error::Schema {
            path,
            msg: format!("checkpoint format {} unsupported", m.format_version),
        });
    }
    Ok(m)
}

/// Load a checkpoint, validating every tensor shape against a freshly
/// built model of the recorded config.
pub fn load_checkpoint<R: Real>(dir: &Path) -> Result<(Denoiser<R>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    if manifest.dtype != R::DTYPE {
        return Err(Error::Schema {
            path: dir.join("manifest.json"),
            msg: format!("checkpoint dtype {} where {} expected", manifest.dtype, R::DTYPE),
        });
    }
    let mut model = Denoiser::<R>::new(&manifest.model)?;
    let mut slots = model.tensors_mut();
    if slots.len() != manifest.tensors.len() {
        return Err(Error::shape("checkpoint tensor count", slots.len(), manifest.tensors.len()));
    }
    for ((name, slot), entry) in slots.iter_mut().zip(&manifest.tensors) {
        if *name != entry.name {
            return Err(Error::shape("checkpoint tensor order", name.as_str(), entry.name.as_str()));
        }
        let path: PathBuf = dir.join(&entry.file);
        let t = read_tensor::<R>(&path)?;
        if t.shape() != slot.shape() {
            return Err(Error::shape(
                format!("tensor {name}"),
                format!("{:?}", slot.shape()),
                format!("{:?}", t.shape()),
            ));
        }
        slot.assign(&t);
    }
    drop(slots);
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn tensor_bytes_round_trip() {
        let a = Array2::from_shape_fn((3, 2), |(i, j)| i as f64 - 0.5 * j as f64).into_dyn();
        let bytes = encode_tensor(&a.view());
        let b: ArrayD<f64> = decode_tensor(&bytes, Path::new("x")).unwrap();
        assert_eq!(a, b);
        assert!(decode_tensor::<f32>(&bytes, Path::new("x")).is_err());
        assert!(decode_tensor::<f64>(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }
}
