use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context_len: usize,
    /// MLP hidden width as a multiple of `dim`.
    pub mlp_mult: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { vocab: 256, dim: 64, layers: 8, heads: 4, context_len: 512, mlp_mult: 4, seed: 0 }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.dim * self.mlp_mult
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.vocab > 0 && self.dim > 0 && self.layers > 0 && self.heads > 0 && self.context_len > 0 && self.mlp_mult > 0,
            "model dimensions must be positive"
        );
        ensure!(self.dim % self.heads == 0, "dim {} not divisible by heads {}", self.dim, self.heads);
        Ok(())
    }
}
