//! Flat parameter storage. Matrices are row-major `in × out` so activations
//! multiply on the left (`x · W`).

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::rng::labelled;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockOffsets {
    pub norm1: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub norm2: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockOffsets>,
    pub unembed: usize,
    pub total: usize,
    pub entries: Vec<TensorEntry>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.dim, cfg.mlp_dim());
        let mut entries = Vec::new();
        let mut cursor = 0usize;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = cursor;
            cursor += shape.iter().product::<usize>();
            entries.push(TensorEntry { name, shape, offset });
            offset
        };
        let tok_emb = push("tok_emb".into(), vec![cfg.vocab, d]);
        let pos_emb = push("pos_emb".into(), vec![cfg.context_len, d]);
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 1..=cfg.layers {
            blocks.push(BlockOffsets {
                norm1: push(format!("block{l}.norm1"), vec![d]),
                wq: push(format!("block{l}.wq"), vec![d, d]),
                wk: push(format!("block{l}.wk"), vec![d, d]),
                wv: push(format!("block{l}.wv"), vec![d, d]),
                wo: push(format!("block{l}.wo"), vec![d, d]),
                norm2: push(format!("block{l}.norm2"), vec![d]),
                w1: push(format!("block{l}.w1"), vec![d, f]),
                b1: push(format!("block{l}.b1"), vec![f]),
                w2: push(format!("block{l}.w2"), vec![f, d]),
                b2: push(format!("block{l}.b2"), vec![d]),
            });
        }
        let unembed = push("unembed".into(), vec![d, cfg.vocab]);
        Layout { tok_emb, pos_emb, blocks, unembed, total: cursor, entries }
    }
}

/// Initialisation: embeddings N(0, 1), norm gains 1, linear maps and biases
/// U(−1/√fan_in, 1/√fan_in).
pub fn init_params(cfg: &ModelConfig, layout: &Layout) -> Vec<f32> {
    let mut rng = labelled(cfg.seed, "init", 0);
    let mut w = vec![0f32; layout.total];
    for e in &layout.entries {
        let n: usize = e.shape.iter().product();
        let slot = &mut w[e.offset..e.offset + n];
        if e.name.ends_with("emb") {
            for v in slot.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        } else if e.name.contains("norm") {
            slot.fill(1.0);
        } else {
            let fan_in = if e.name.ends_with(".b1") {
                cfg.dim
            } else if e.name.ends_with(".b2") {
                cfg.mlp_dim()
            } else {
                e.shape[0]
            };
            let bound = 1.0 / (fan_in as f32).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for v in slot.iter_mut() {
                *v = rng.sample(dist);
            }
        }
    }
    w
}
