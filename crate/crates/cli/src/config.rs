use std::path::{Path, PathBuf};

use conceptlens::pipeline::ExperimentConfig;
use conceptlens::subspace::{ViewScaling, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS, DEFAULT_RIDGE};
use conceptlens::toymodel::{Corruption, ModelConfig, TaskConfig, TrainConfig};
use conceptlens::headlab::{DEFAULT_FWER_ALPHA, DEFAULT_FWER_PERMUTATIONS};
use conceptlens::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a command may need; absent fields take their defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub checkpoint: Option<PathBuf>,
    pub manifests: Vec<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub task: TaskConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
    pub analysis: AnalysisConfig,
    pub heads: HeadsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub layers: Option<Vec<usize>>,
    /// Fixed GCCA rank; `None` selects it by permutation test.
    pub rank: Option<usize>,
    pub r_max: Option<usize>,
    pub permutations: usize,
    pub alpha: f64,
    pub ridge: f64,
    pub scaling: ViewScaling,
    pub variance_frac: f64,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            layers: None,
            rank: None,
            r_max: None,
            permutations: DEFAULT_PERMUTATIONS,
            alpha: DEFAULT_ALPHA,
            ridge: DEFAULT_RIDGE,
            scaling: ViewScaling::None,
            variance_frac: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadsConfig {
    pub permutations: usize,
    pub alpha: f64,
    pub conditions: Vec<Corruption>,
}

impl Default for HeadsConfig {
    fn default() -> Self {
        HeadsConfig { permutations: DEFAULT_FWER_PERMUTATIONS, alpha: DEFAULT_FWER_ALPHA, conditions: vec![Corruption::Label] }
    }
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::validation(format!("malformed job config {}: {e}", path.display())))
    }

    /// One seed for every stochastic stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.task.seed = seed;
        self.train.seed = seed;
        self.experiment.seed = seed;
        self.analysis.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.experiment.validate()?;
        let a = &self.analysis;
        check(a.variance_frac > 0.0 && a.variance_frac <= 1.0, "variance_frac must lie in (0, 1]")?;
        check(a.alpha > 0.0 && a.alpha < 1.0, "analysis alpha must lie in (0, 1)")?;
        check(a.ridge >= 0.0, "ridge must be non-negative")?;
        check(a.rank != Some(0), "rank must be at least 1")?;
        check(self.heads.alpha > 0.0 && self.heads.alpha < 1.0, "heads alpha must lie in (0, 1)")?;
        check(!self.heads.conditions.is_empty(), "heads conditions must not be empty")?;
        Ok(())
    }
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::validation(msg))
    }
}
