//! Named parameter collections and the on-disk checkpoint format.
//!
//! Checkpoints are a single JSON manifest line (tensor names and shapes,
//! RNG seed, configuration hash, and any auxiliary float arrays) followed
//! by the raw little-endian `f64` payload of every tensor in manifest
//! order. Names iterate in sorted order everywhere, which keeps optimizer
//! updates and payload layout deterministic.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Ordered map of trainable tensors.
#[derive(Debug)]
pub struct ParamSet<T: Real> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { map: BTreeMap::new() }
    }

    /// Insert a tensor under a unique name and hand back a shared handle.
    ///
    /// Panics on duplicate names: layer constructors own the namespace.
    pub fn register(&mut self, name: &str, tensor: Tensor<T>) -> Tensor<T> {
        assert!(
            self.map.insert(name.to_string(), tensor.clone()).is_none(),
            "duplicate parameter name: {name}"
        );
        tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count_scalars(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&self) {
        for t in self.map.values() {
            t.clear_grad();
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    config_hash: u64,
    #[serde(default)]
    extras: BTreeMap<String, Vec<f64>>,
    tensors: Vec<TensorEntry>,
}

/// Checkpoint metadata stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    /// Seed the training run was launched with.
    pub seed: u64,
    /// Hash of the configuration the model was built from; loading code
    /// compares it against the active configuration.
    pub config_hash: u64,
    /// Auxiliary non-trainable arrays (e.g. normalization statistics).
    pub extras: BTreeMap<String, Vec<f64>>,
}

/// Write parameters and metadata to `path`.
pub fn save_checkpoint<T: Real>(params: &ParamSet<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let manifest = Manifest {
        format: "kmckpt".to_string(),
        version: 1,
        seed: meta.seed,
        config_hash: meta.config_hash,
        extras: meta.extras.clone(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    let mut file = fs::File::create(path)?;
    serde_json::to_writer(&mut file, &manifest)?;
    file.write_all(b"\n")?;
    let mut payload = Vec::new();
    for (_, t) in params.iter() {
        for v in t.data().iter() {
            payload.extend_from_slice(&v.f64().to_le_bytes());
        }
    }
    file.write_all(&payload)?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<(Manifest, Vec<f64>)> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    if !header.ends_with('\n') {
        return Err(Error::malformed_header(path, "missing newline after JSON manifest"));
    }
    let manifest: Manifest = serde_json::from_str(header.trim_end())
        .map_err(|e| Error::malformed_header(path, format!("invalid manifest: {e}")))?;
    if manifest.format != "kmckpt" {
        return Err(Error::malformed_header(path, format!("unknown format tag {:?}", manifest.format)));
    }
    let total: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let want = total * 8;
    let mut payload = Vec::with_capacity(want);
    reader.read_to_end(&mut payload)?;
    if payload.len() < want {
        return Err(Error::truncated(path, want, payload.len()));
    }
    if payload.len() > want {
        return Err(Error::malformed_header(
            path,
            format!("payload has {} trailing bytes", payload.len() - want),
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8 bytes")))
        .collect();
    Ok((manifest, values))
}

/// Read a checkpoint into a fresh parameter set of trainable leaves.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ParamSet<T>, CheckpointMeta)> {
    let (manifest, values) = read_manifest(path)?;
    let mut params = ParamSet::new();
    let mut offset = 0;
    for entry in &manifest.tensors {
        let ne: usize = entry.shape.iter().product();
        let data: Vec<T> = values[offset..offset + ne].iter().map(|&v| T::c(v)).collect();
        offset += ne;
        if params.map.contains_key(&entry.name) {
            return Err(Error::malformed_header(path, format!("duplicate tensor name {:?}", entry.name)));
        }
        params.register(&entry.name, Tensor::param(data, &entry.shape));
    }
    Ok((
        params,
        CheckpointMeta { seed: manifest.seed, config_hash: manifest.config_hash, extras: manifest.extras },
    ))
}

/// Load checkpoint values into an existing, identically structured set.
/// Every stored tensor must match a registered name and shape exactly.
pub fn load_checkpoint_into<T: Real>(params: &ParamSet<T>, path: &Path) -> Result<CheckpointMeta> {
    let (manifest, values) = read_manifest(path)?;
    if manifest.tensors.len() != params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint has {} tensors, model has {}",
            manifest.tensors.len(),
            params.len()
        )));
    }
    let mut offset = 0;
    for entry in &manifest.tensors {
        let ne: usize = entry.shape.iter().product();
        let Some(t) = params.get(&entry.name) else {
            return Err(Error::CheckpointMismatch(format!("model has no tensor named {:?}", entry.name)));
        };
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {:?} has shape {:?} in checkpoint but {:?} in model",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        let data: Vec<T> = values[offset..offset + ne].iter().map(|&v| T::c(v)).collect();
        offset += ne;
        t.set_data(&data);
    }
    Ok(CheckpointMeta { seed: manifest.seed, config_hash: manifest.config_hash, extras: manifest.extras })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.register("b.weight", Tensor::param(vec![1.5, -2.5, 3.5, 0.25], &[2, 2]));
        p.register("a.bias", Tensor::param(vec![0.5, -0.5], &[2]));
        p
    }

    #[test]
    fn names_iterate_sorted() {
        let p = sample_params();
        let names: Vec<&String> = p.names().collect();
        assert_eq!(names, ["a.bias", "b.weight"]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_registration_panics() {
        let mut p = sample_params();
        p.register("a.bias", Tensor::param(vec![0.0], &[1]));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kmckpt");
        let p = sample_params();
        let mut extras = BTreeMap::new();
        extras.insert("latent_mean".to_string(), vec![0.1, 0.2]);
        let meta = CheckpointMeta { seed: 77, config_hash: 0xdeadbeefdeadbeef, extras };
        save_checkpoint(&p, &meta, &path).unwrap();

        let (loaded, got_meta) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(got_meta, meta);
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("b.weight").unwrap().data_vec(), vec![1.5, -2.5, 3.5, 0.25]);
        assert_eq!(loaded.get("a.bias").unwrap().shape(), &[2]);
        assert!(loaded.get("a.bias").unwrap().requires_grad());
    }

    #[test]
    fn load_into_rejects_shape_changes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kmckpt");
        save_checkpoint(&sample_params(), &CheckpointMeta::default(), &path).unwrap();

        let mut other = ParamSet::<f64>::new();
        other.register("b.weight", Tensor::param(vec![0.0; 4], &[4]));
        other.register("a.bias", Tensor::param(vec![0.0; 2], &[2]));
        let err = load_checkpoint_into(&other, &path).unwrap_err();
        assert!(matches!(err, Error::CheckpointMismatch(_)), "{err}");
    }

    #[test]
    fn load_into_rejects_missing_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kmckpt");
        save_checkpoint(&sample_params(), &CheckpointMeta::default(), &path).unwrap();

        let mut other = ParamSet::<f64>::new();
        other.register("b.weight", Tensor::param(vec![0.0; 4], &[2, 2]));
        other.register("renamed", Tensor::param(vec![0.0; 2], &[2]));
        assert!(load_checkpoint_into(&other, &path).is_err());
    }

    #[test]
    fn truncated_checkpoint_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kmckpt");
        save_checkpoint(&sample_params(), &CheckpointMeta::default(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path).unwrap_err(),
            Error::TruncatedPayload { .. }
        ));
    }

    #[test]
    fn load_into_restores_values_in_place() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kmckpt");
        let p = sample_params();
        save_checkpoint(&p, &CheckpointMeta { seed: 5, ..Default::default() }, &path).unwrap();
        p.get("a.bias").unwrap().set_data(&[9.0, 9.0]);
        let meta = load_checkpoint_into(&p, &path).unwrap();
        assert_eq!(meta.seed, 5);
        assert_eq!(p.get("a.bias").unwrap().data_vec(), vec![0.5, -0.5]);
    }
}
