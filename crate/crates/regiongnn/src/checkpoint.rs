//! Checkpoint directories.
//!
//! `model.json` holds the configs, label scaling and split; `params.json`
//! lists `{name, shape, byte_offset}` per parameter in store order; and
//! `params.bin` is the concatenated little-endian `f64` values. Optimizer
//! moments are not persisted.

use std::fs;
use std::path::Path;

use regiongnn_core::model::{LabelScaler, ModelConfig};
use regiongnn_core::trainer::{Checkpoint, TrainConfig};
use regiongnn_core::{ParamStore, SplitAssignment, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{create_dir, read_json, write_bytes, write_json};

pub const MODEL_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub feature_dim: usize,
    pub scaler: LabelScaler,
    pub split: SplitAssignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
}

pub fn save(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    create_dir(dir)?;
    let record = ModelRecord {
        model: ckpt.model.clone(),
        train: ckpt.train.clone(),
        feature_dim: ckpt.feature_dim,
        scaler: ckpt.scaler.clone(),
        split: ckpt.split.clone(),
    };
    write_json(&dir.join(MODEL_FILE), &record)?;
    let mut entries = Vec::with_capacity(ckpt.params.len());
    let mut blob = Vec::new();
    for (name, t) in ckpt.params.iter() {
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            byte_offset: blob.len(),
        });
        for v in t.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_json(&dir.join(PARAMS_FILE), &entries)?;
    write_bytes(&dir.join(BLOB_FILE), &blob)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let record: ModelRecord = read_json(&dir.join(MODEL_FILE))?;
    let entries: Vec<ParamEntry> = read_json(&dir.join(PARAMS_FILE))?;
    let bpath = dir.join(BLOB_FILE);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut params = ParamStore::new();
    for e in &entries {
        let n: usize = e.shape.iter().product();
        let end = e.byte_offset + 8 * n;
        let bytes = blob.get(e.byte_offset..end).ok_or_else(|| {
            Error::format(
                &bpath,
                format!("`{}` runs past the end of the blob", e.name),
            )
        })?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), values)?)?;
    }
    let expected: usize = entries
        .iter()
        .map(|e| 8 * e.shape.iter().product::<usize>())
        .sum();
    if expected != blob.len() {
        return Err(Error::format(
            &bpath,
            format!("{} bytes, manifest covers {expected}", blob.len()),
        ));
    }
    let specs = record.model.param_specs(record.feature_dim);
    for spec in &specs {
        params.id(&spec.name)?;
    }
    if specs.len() != params.len() {
        return Err(Error::format(
            &dir.join(PARAMS_FILE),
            format!(
                "{} parameters, model declares {}",
                params.len(),
                specs.len()
            ),
        ));
    }
    Ok(Checkpoint {
        model: record.model,
        train: record.train,
        feature_dim: record.feature_dim,
        scaler: record.scaler,
        split: record.split,
        params,
    })
}
