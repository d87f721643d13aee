//! Run provenance attached to every exported report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    /// SHA-256 of the canonical JSON of the driving configuration.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub run_ids: Vec<String>,
    pub config: serde_json::Value,
}

/// Hex SHA-256 of `config` rendered through `serde_json::Value`, whose
/// object keys are sorted, so field order does not affect the hash.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let value = serde_json::to_value(config)?;
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&value)?)))
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C) -> Result<Self> {
        Ok(Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(config)?,
            seeds: BTreeMap::new(),
            run_ids: Vec::new(),
            config: serde_json::to_value(config)?,
        })
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn with_run_ids(mut self, ids: impl IntoIterator<Item = String>) -> Self {
        self.run_ids.extend(ids);
        self
    }
}
