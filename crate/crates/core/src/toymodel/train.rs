use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Layout;
use super::scalar::{matmul_nt, matmul_tn_acc, Scalar};
use super::forward::{backward, forward, logits, BlockCache};
use super::task::{Prompt, Task, NEWLINE};
use super::ToyModel;
use crate::error::{ensure, Error, Result};
use crate::rng::labelled;
use crate::tensorstore::SpanClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Probability that a training demonstration carries a wrong label.
    pub label_noise: f64,
    pub min_demos: usize,
    pub max_demos: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2500,
            batch: 32,
            lr: 4e-3,
            warmup: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            label_noise: 0.15,
            min_demos: 1,
            max_demos: 8,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch > 0, "batch must be positive");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        ensure!(self.min_demos <= self.max_demos, "min_demos exceeds max_demos");
        ensure!((0.0..1.0).contains(&self.label_noise), "label_noise must lie in [0, 1)");
        ensure!((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), "Adam betas must lie in [0, 1)");
        Ok(())
    }

    /// Linear warm-up followed by cosine decay to zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = ((step + 1) as f64 / self.warmup.max(1) as f64).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / self.steps.max(1) as f64).cos());
        self.lr * warm * cos
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// (step, mean loss since the previous entry).
    pub loss_curve: Vec<(usize, f64)>,
    pub final_loss: f64,
    pub steps: usize,
}

/// Training sequence: the prompt followed by its target label.
pub fn training_tokens(p: &Prompt) -> Vec<u32> {
    let mut t = p.tokens();
    t.push(p.target);
    t
}

/// Supervised positions of [`training_tokens`]: every `⇒` predicts the label
/// that follows it and every label, the answer included, predicts the newline.
pub fn training_targets(p: &Prompt) -> Vec<(usize, u32)> {
    let tokens = p.tokens();
    let spans = p.spans();
    let mut out = Vec::new();
    for s in &spans.spans {
        match s.class {
            SpanClass::MappingDelimiter => out.push((s.start, tokens[s.start + 1])),
            SpanClass::DemoLabel => out.push((s.start, NEWLINE)),
            SpanClass::FinalDelimiter => {
                out.push((s.start, p.target));
                out.push((s.start + 1, NEWLINE));
            }
            _ => {}
        }
    }
    out
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn step(&mut self, w: &mut [f32], g: &[f32], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let step = (lr / c1) as f32;
        let c2s = (1.0 / c2).sqrt() as f32;
        let eps = cfg.eps as f32;
        for i in 0..w.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            w[i] -= step * self.m[i] / (self.v[i].sqrt() * c2s + eps);
        }
    }
}

/// Mean cross-entropy over the supervised positions of equal-length prompts,
/// and its gradient with respect to every parameter.
pub(crate) fn loss_and_gradient<T: Scalar>(cfg: &ModelConfig, lay: &Layout, w: &[T], prompts: &[Prompt]) -> (f64, Vec<T>) {
    let (d, vsz) = (cfg.dim, cfg.vocab);
    let (b, t) = (prompts.len(), prompts[0].len() + 1);
    let tokens: Vec<u32> = prompts.iter().flat_map(training_tokens).collect();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (bi, p) in prompts.iter().enumerate() {
        for (pos, y) in training_targets(p) {
            rows.push(bi * t + pos);
            targets.push(y as usize);
        }
    }
    let mut caches: Vec<BlockCache<T>> = Vec::with_capacity(cfg.layers);
    let h = forward(cfg, lay, w, &tokens, b, t, Some(&mut caches), None);
    let lg = logits(cfg, lay, w, &h, &rows);
    let count = rows.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = vec![T::zero(); lg.len()];
    for (i, row) in lg.chunks_exact(vsz).enumerate() {
        let mx = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x.f64()));
        let lse = mx + row.iter().map(|&x| (x.f64() - mx).exp()).sum::<f64>().ln();
        loss -= row[targets[i]].f64() - lse;
        for j in 0..vsz {
            let p = (row[j].f64() - lse).exp();
            let y = if j == targets[i] { 1.0 } else { 0.0 };
            dlogits[i * vsz + j] = T::of((p - y) / count);
        }
    }
    loss /= count;

    let mut grad = vec![T::zero(); w.len()];
    let mut hsel = Vec::with_capacity(rows.len() * d);
    for &r in &rows {
        hsel.extend_from_slice(&h[r * d..(r + 1) * d]);
    }
    let un = lay.unembed..lay.unembed + d * vsz;
    matmul_tn_acc(rows.len(), d, vsz, &hsel, &dlogits, &mut grad[un.clone()]);
    let mut dsel = vec![T::zero(); rows.len() * d];
    matmul_nt(rows.len(), vsz, d, &dlogits, &w[un], &mut dsel, false);
    let mut dh = vec![T::zero(); h.len()];
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..d {
            dh[r * d + j] += dsel[i * d + j];
        }
    }
    backward(cfg, lay, w, &tokens, b, t, &caches, dh, &mut grad);
    (loss, grad)
}

/// Trains a fresh model on the task with next-token cross-entropy at the
/// supervised positions. Single-threaded and bit-reproducible for a seed.
pub fn train(model_cfg: &ModelConfig, task: &Task, cfg: &TrainConfig) -> Result<(ToyModel, TrainReport)> {
    cfg.validate()?;
    model_cfg.validate()?;
    ensure!(task.vocab_needed() <= model_cfg.vocab, "task needs {} tokens, model has {}", task.vocab_needed(), model_cfg.vocab);
    let model = ToyModel::new(model_cfg.clone())?;
    let (lay, mut w) = (model.layout().clone(), model.weights().to_vec());
    let mut adam = Adam { m: vec![0.0; w.len()], v: vec![0.0; w.len()], t: 0 };
    let mut rng = labelled(cfg.seed, "train-data", 0);
    let mut curve = Vec::new();
    let (mut acc_loss, mut acc_n) = (0.0, 0usize);
    let mut last_loss = f64::NAN;

    for step in 0..cfg.steps {
        let n = rng.gen_range(cfg.min_demos..=cfg.max_demos);
        let prompts: Vec<Prompt> = (0..cfg.batch)
            .map(|_| task.training_prompt(n, cfg.label_noise, &mut rng))
            .collect::<Result<_>>()?;
        ensure!(prompts[0].len() <= model_cfg.context_len, "training prompt overflows the context");
        let (loss, grad) = loss_and_gradient(model_cfg, &lay, &w, &prompts);
        if !loss.is_finite() {
            return Err(Error::numerical(format!(
                "training diverged at step {step} (loss {loss}, lr {:.3e}, demos {n})",
                cfg.lr_at(step)
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numerical(format!("non-finite gradient at step {step}")));
        }
        adam.step(&mut w, &grad, cfg.lr_at(step), cfg);

        acc_loss += loss;
        acc_n += 1;
        last_loss = loss;
        if cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            curve.push((step + 1, acc_loss / acc_n as f64));
            acc_loss = 0.0;
            acc_n = 0;
        }
    }
    let model = ToyModel::from_weights(model_cfg.clone(), w)?;
    Ok((model, TrainReport { loss_curve: curve, final_loss: last_loss, steps: cfg.steps }))
}
