use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::Trained;
use crate::config::{ModelConfig, TrainConfig};
use crate::data::io::{read_json, write_json};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::vtt::EhrStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON description of a checkpoint; the values live in `params_file` as
/// little-endian f64 in the listed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ehr_stats: EhrStats,
    pub fold: usize,
    pub epoch: usize,
    pub params_file: String,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(path: &Path, model: &Trained, train: &TrainConfig, fold: usize, epoch: usize) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad checkpoint path {}", path.display())))?;
    let params_file = format!("{stem}.f64raw");
    let store = &model.network.store;
    let manifest = CheckpointManifest {
        model: model.network.config().clone(),
        train: train.clone(),
        ehr_stats: model.stats.clone(),
        fold,
        epoch,
        params_file: params_file.clone(),
        params: store
            .ids()
            .map(|id| ParamEntry { name: store.name(id).to_string(), shape: store.get(id).shape().to_vec() })
            .collect(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes: Vec<u8> = store.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    let raw = path.with_file_name(&params_file);
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    write_json(path, &manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(Trained, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(path)?;
    let mut network = Network::new(&manifest.model, 0)?;
    let store = &network.store;
    let expected: Vec<ParamEntry> = store
        .ids()
        .map(|id| ParamEntry { name: store.name(id).to_string(), shape: store.get(id).shape().to_vec() })
        .collect();
    if expected != manifest.params {
        return Err(Error::Data(format!(
            "{}: parameter list does not match the model configuration",
            path.display()
        )));
    }
    let raw = path.with_file_name(&manifest.params_file);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Data(format!("{}: length is not a multiple of 8", raw.display())));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    network.store.load_flat(&flat)?;
    let stats = manifest.ehr_stats.clone();
    Ok((Trained { network, stats }, manifest))
}
