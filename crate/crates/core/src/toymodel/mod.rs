//! Toy pre-norm decoder-only transformer, its synthetic task, trainer and
//! evaluation.

mod checkpoint;
mod config;
mod eval;
mod forward;
mod params;
mod scalar;
mod task;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use eval::{evaluate_exact_match, greedy_decode, score_generation, EvalItem, EvalRecord, EvalReport};
pub use forward::{ForwardHook, NoHook};
pub use params::{Layout, TensorEntry};
pub use task::{Corruption, Demo, Prompt, Run, Task, TaskConfig, BOS, DELIM, NEWLINE};
pub use train::{train, training_targets, training_tokens, TrainConfig, TrainReport};

use forward::{forward, log_softmax, logits, Inspect, RawTrace};

use crate::error::{ensure, Result};

/// Final-position record of one forward pass. Layers of `hidden` run 0..=L;
/// `heads`, `mlp` and `attention` are indexed by block (layer ℓ at ℓ−1).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub hidden: Vec<Vec<f64>>,
    pub heads: Vec<Vec<Vec<f64>>>,
    pub mlp: Vec<Vec<f64>>,
    /// Last-row attention weights per block and head, when requested.
    pub attention: Option<Vec<Vec<Vec<f64>>>>,
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn num_layers(&self) -> usize {
        self.mlp.len()
    }

    pub fn head(&self, layer: usize, head: usize) -> &[f64] {
        &self.heads[layer - 1][head]
    }

    /// Largest relative violation of h_ℓ = h_{ℓ−1} + Σ_k a_{ℓ,k} + m_ℓ.
    pub fn residual_identity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for l in 1..=self.num_layers() {
            let h = &self.hidden[l];
            let scale = h.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let mut err = 0.0;
            for j in 0..h.len() {
                let s: f64 = self.heads[l - 1].iter().map(|a| a[j]).sum();
                let r = h[j] - (self.hidden[l - 1][j] + s + self.mlp[l - 1][j]);
                err += r * r;
            }
            worst = worst.max(err.sqrt() / scale);
        }
        worst
    }
}

/// A model that exposes last-position hooks; the interface every
/// intervention in the crate is written against.
pub trait HookedModel: Sync {
    fn num_layers(&self) -> usize;
    fn num_heads(&self) -> usize;
    fn dim(&self) -> usize;
    fn vocab(&self) -> usize;
    fn run(&self, tokens: &[u32], hook: &mut dyn ForwardHook<f64>, attention: bool) -> Result<ForwardTrace>;

    fn trace(&self, tokens: &[u32]) -> Result<ForwardTrace> {
        self.run(tokens, &mut NoHook, false)
    }
}

/// Trained or freshly initialised toy model. Weights live in f32 (training
/// precision); analysis passes run on an f64 copy.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub config: ModelConfig,
    layout: Layout,
    weights: Vec<f32>,
    weights64: Vec<f64>,
}

impl ToyModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let w = params::init_params(&config, &layout);
        Self::from_weights(config, w)
    }

    pub fn from_weights(config: ModelConfig, weights: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        ensure!(
            weights.len() == layout.total,
            "expected {} parameters, got {}",
            layout.total,
            weights.len()
        );
        let weights64 = weights.iter().map(|&x| x as f64).collect();
        Ok(ToyModel { config, layout, weights, weights64 })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn num_parameters(&self) -> usize {
        self.layout.total
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        ensure!(!tokens.is_empty(), "empty prompt");
        ensure!(
            tokens.len() <= self.config.context_len,
            "prompt of {} tokens overflows context length {}",
            tokens.len(),
            self.config.context_len
        );
        ensure!(
            tokens.iter().all(|&t| (t as usize) < self.config.vocab),
            "token id outside vocabulary"
        );
        Ok(())
    }

    /// Log-probabilities at every position of a batch of equal-length
    /// sequences, computed in f32 as during training.
    pub fn batch_log_probs_f32(&self, tokens: &[u32], b: usize, t: usize) -> Result<Vec<Vec<f64>>> {
        ensure!(tokens.len() == b * t, "token buffer does not match b·t");
        self.check_tokens(&tokens[..t])?;
        let h = forward(&self.config, &self.layout, &self.weights, tokens, b, t, None, None);
        let rows: Vec<usize> = (0..b * t).collect();
        let lg = logits(&self.config, &self.layout, &self.weights, &h, &rows);
        Ok(lg
            .chunks_exact(self.config.vocab)
            .map(|r| log_softmax(&r.iter().map(|&x| x as f64).collect::<Vec<_>>()))
            .collect())
    }
}

impl HookedModel for ToyModel {
    fn num_layers(&self) -> usize {
        self.config.layers
    }

    fn num_heads(&self) -> usize {
        self.config.heads
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn vocab(&self) -> usize {
        self.config.vocab
    }

    fn run(&self, tokens: &[u32], hook: &mut dyn ForwardHook<f64>, attention: bool) -> Result<ForwardTrace> {
        self.check_tokens(tokens)?;
        let t = tokens.len();
        let mut raw = RawTrace::default();
        let h = forward(
            &self.config,
            &self.layout,
            &self.weights64,
            tokens,
            1,
            t,
            None,
            Some(Inspect { hook, trace: &mut raw, attention }),
        );
        let lg = logits(&self.config, &self.layout, &self.weights64, &h, &[t - 1]);
        let log_probs = log_softmax(&lg);
        Ok(ForwardTrace {
            hidden: raw.hidden,
            heads: raw.heads,
            mlp: raw.mlp,
            attention: attention.then_some(raw.attention),
            logits: lg,
            log_probs,
        })
    }
}
