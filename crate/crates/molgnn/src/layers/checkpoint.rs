//! Model checkpoint archive: a JSON manifest (layers, feature layout, task,
//! seed, parameter shapes) followed by raw little-endian f64 parameter
//! blobs in manifest order. Round-trips are bit-exact.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::featurize::FeatureConfig;
use crate::layers::{GnnModel, LayerConfig, LayerError, ParamStore, Task};

const MAGIC: &[u8; 4] = b"MGCK";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    layers: Vec<LayerConfig>,
    feature_config: serde_json::Value,
    task: Task,
    seed: u64,
    params: Vec<ParamEntry>,
}

/// Write `model` to `path` as a single archive file.
pub fn save_model(model: &GnnModel, path: &Path) -> Result<(), LayerError> {
    let feature_config: serde_json::Value =
        serde_json::from_str(&model.feature_config.to_json())
            .map_err(|e| LayerError::BadCheckpoint(e.to_string()))?;
    let manifest = Manifest {
        layers: model.layers.clone(),
        feature_config,
        task: model.task,
        seed: model.seed,
        params: model
            .params
            .iter()
            .map(|(name, t)| ParamEntry { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| LayerError::BadCheckpoint(e.to_string()))?;

    let mut f = File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(manifest_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&manifest_bytes)?;
    for (_, tensor) in model.params.iter() {
        for &x in tensor.data() {
            f.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a model archive written by [`save_model`].
pub fn load_model(path: &Path) -> Result<GnnModel, LayerError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(LayerError::BadCheckpoint("missing archive magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(LayerError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let mlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let body = &bytes[10..];
    if body.len() < mlen {
        return Err(LayerError::BadCheckpoint("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen])
        .map_err(|e| LayerError::BadCheckpoint(e.to_string()))?;
    let feature_config = FeatureConfig::from_json(
        &serde_json::to_string(&manifest.feature_config)
            .map_err(|e| LayerError::BadCheckpoint(e.to_string()))?,
    )
    .map_err(|e| LayerError::BadCheckpoint(e.to_string()))?;

    let mut params = ParamStore::new();
    let mut offset = mlen;
    for entry in &manifest.params {
        let count: usize = entry.shape.iter().product();
        let end = offset + count * 8;
        if body.len() < end {
            return Err(LayerError::BadCheckpoint(format!(
                "truncated blob for parameter `{}`",
                entry.name
            )));
        }
        let data: Vec<f64> = body[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| LayerError::BadCheckpoint(e.to_string()))?;
        params.set(&entry.name, tensor);
        offset = end;
    }
    if offset != body.len() {
        return Err(LayerError::BadCheckpoint("trailing bytes after parameter blobs".into()));
    }
    Ok(GnnModel {
        layers: manifest.layers,
        params,
        feature_config,
        task: manifest.task,
        seed: manifest.seed,
    })
}
