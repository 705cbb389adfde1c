//! Parameter checkpoints: a JSON manifest next to a flat little-endian binary.
//!
//! `model.json` lists every tensor's name, shape and offset; `model.bin`
//! starts with an 8-byte magic and a `u32` format version followed by the
//! concatenated `f64` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"EVGPARAM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    pub data_file: String,
    /// Free-form model description (architecture kind and sizes).
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

fn data_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

pub fn save(
    manifest_path: &Path,
    params: &ParamSet,
    meta: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let bin_path = data_path(manifest_path);
    let mut bytes = Vec::with_capacity(HEADER_LEN + 8 * params.num_scalars());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for id in params.ids() {
        let value = params.value(id);
        tensors.push(TensorEntry {
            name: params.name(id).to_string(),
            shape: value.shape().to_vec(),
            offset,
            len: value.len(),
        });
        for v in value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += value.len();
    }

    let manifest = Manifest {
        version: FORMAT_VERSION,
        dtype: "f64".into(),
        data_file: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        meta,
        tensors,
    };
    fs::write(&bin_path, bytes)?;
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load(manifest_path: &Path) -> Result<(ParamSet, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.version != FORMAT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    if manifest.dtype != "f64" {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported dtype {}",
            manifest.dtype
        )));
    }
    let bin_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.data_file);
    let bytes = fs::read(&bin_path)?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported data version {version}"
        )));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut params = ParamSet::new();
    for entry in &manifest.tensors {
        let [rows, cols] = entry.shape[..] else {
            return Err(AutodiffError::Checkpoint(format!(
                "tensor `{}` is not two-dimensional",
                entry.name
            )));
        };
        let end = entry.offset + entry.len;
        if end > values.len() || rows * cols != entry.len {
            return Err(AutodiffError::Checkpoint(format!(
                "tensor `{}` out of bounds",
                entry.name
            )));
        }
        let t = Tensor::new(rows, cols, values[entry.offset..end].to_vec())?;
        params.add(entry.name.clone(), t);
    }
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_then_load_restores_values_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut p = ParamSet::new();
        p.add("a.w", Tensor::new(2, 2, vec![1.5, -0.0, f64::MIN_POSITIVE, 3e300]).unwrap());
        p.add("a.b", Tensor::row(vec![0.25]));
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), serde_json::json!("mlp"));
        save(&path, &p, meta.clone()).unwrap();

        let (q, manifest) = load(&path).unwrap();
        assert_eq!(manifest.meta, meta);
        for id in p.ids() {
            assert_eq!(p.name(id), q.name(id));
            let (a, b) = (p.value(id).data(), q.value(id).data());
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn rejects_corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut p = ParamSet::new();
        p.add("x", Tensor::scalar(1.0));
        save(&path, &p, BTreeMap::new()).unwrap();
        let bin = path.with_extension("bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[0] = b'X';
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(load(&path), Err(AutodiffError::Checkpoint(_))));
    }
}
