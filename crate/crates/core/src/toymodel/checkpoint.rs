//! Checkpoints: `config.json` (model and task configuration) plus
//! `weights.actb`, a flat f32 tensor whose header lists every named slice.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, TaskConfig, ToyModel};
use crate::error::{ensure, Result};
use crate::tensorstore::{read_tensor, write_tensor, TensorFile, TensorHeader};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    task: TaskConfig,
}

pub fn save_checkpoint(dir: &Path, model: &ToyModel, task: &TaskConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = CheckpointConfig { model: model.config.clone(), task: task.clone() };
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let mut header = TensorHeader::new(vec![model.num_parameters()], &["parameter"]);
    header.metadata.insert("tensors".into(), serde_json::to_value(&model.layout().entries)?);
    write_tensor(dir.join("weights.actb"), &TensorFile::new(header, model.weights().to_vec())?)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ToyModel, TaskConfig)> {
    let cfg: CheckpointConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    let t = read_tensor(dir.join("weights.actb"))?;
    let model = ToyModel::from_weights(cfg.model, t.data)?;
    if let Some(entries) = t.header.metadata.get("tensors") {
        ensure!(
            *entries == serde_json::to_value(&model.layout().entries)?,
            "checkpoint tensor table does not match the configured architecture"
        );
    }
    Ok((model, cfg.task))
}
