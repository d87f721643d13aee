//! Synthetic reverse-dictionary task.
//!
//! Each concept owns a small signature of alphabet tokens; a description is a
//! short sequence whose tokens come from the signature with high probability
//! and from the whole alphabet otherwise. A prompt lists N demonstrations
//! `description ⇒ label ⏎` drawn from the demonstration pool, then a query
//! description from the held-out concepts followed by `⇒`.
//!
//! The label of a concept depends on a latent context bit: under context 0 it
//! is the concept's own label token, under context 1 the label of a fixed
//! partner concept. The bit is only recoverable from the demonstrations, so
//! answering a query needs in-context inference rather than a lookup.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{labelled, Rng};
use crate::tensorstore::{PromptSpans, Span, SpanClass};

pub const BOS: u32 = 0;
pub const DELIM: u32 = 1;
pub const NEWLINE: u32 = 2;
const FIRST_LABEL: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub concepts: usize,
    pub alphabet: usize,
    pub description_len: usize,
    pub signature_len: usize,
    /// Probability that a description token is drawn from the signature.
    pub signature_prob: f64,
    /// Fraction of concepts reserved for demonstrations.
    pub pool_fraction: f64,
    /// Largest demonstration count the pool must support.
    pub max_demos: usize,
    pub contexts: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            concepts: 32,
            alphabet: 128,
            description_len: 5,
            signature_len: 3,
            signature_prob: 0.85,
            pool_fraction: 0.2,
            max_demos: 8,
            contexts: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub concept: usize,
    pub description: Vec<u32>,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub context: usize,
    pub demos: Vec<Demo>,
    pub query_concept: usize,
    pub query: Vec<u32>,
    /// Correct label of the query under `context`.
    pub target: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    Description,
    Label,
    Query,
}

impl Corruption {
    pub const ALL: [Corruption; 3] = [Corruption::Description, Corruption::Label, Corruption::Query];

    pub fn name(self) -> &'static str {
        match self {
            Corruption::Description => "description",
            Corruption::Label => "label",
            Corruption::Query => "query",
        }
    }
}

impl Prompt {
    pub fn tokens(&self) -> Vec<u32> {
        let mut t = vec![BOS];
        for d in &self.demos {
            t.extend_from_slice(&d.description);
            t.extend_from_slice(&[DELIM, d.label, NEWLINE]);
        }
        t.extend_from_slice(&self.query);
        t.push(DELIM);
        t
    }

    pub fn len(&self) -> usize {
        1 + self.demos.iter().map(|d| d.description.len() + 3).sum::<usize>() + self.query.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Token offsets of the five span classes; BOS and newlines are "other".
    pub fn spans(&self) -> PromptSpans {
        let mut spans = Vec::new();
        let mut pos = 1;
        for d in &self.demos {
            let n = d.description.len();
            spans.push(Span { class: SpanClass::DemoDescription, start: pos, end: pos + n });
            spans.push(Span { class: SpanClass::MappingDelimiter, start: pos + n, end: pos + n + 1 });
            spans.push(Span { class: SpanClass::DemoLabel, start: pos + n + 1, end: pos + n + 2 });
            pos += n + 3;
        }
        let n = self.query.len();
        spans.push(Span { class: SpanClass::Query, start: pos, end: pos + n });
        spans.push(Span { class: SpanClass::FinalDelimiter, start: pos + n, end: pos + n + 1 });
        PromptSpans { prompt_len: pos + n + 1, spans }
    }
}

/// A fixed demonstration set (one context) with its query items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub seed: u64,
    pub context: usize,
    pub prompts: Vec<Prompt>,
}

impl Run {
    pub fn item_ids(&self) -> Vec<String> {
        let mut counts = std::collections::BTreeMap::new();
        self.prompts
            .iter()
            .map(|p| {
                let c = counts.entry(p.query_concept).or_insert(0usize);
                *c += 1;
                format!("c{:02}/s{}", p.query_concept, *c - 1)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub config: TaskConfig,
    pub signatures: Vec<Vec<u32>>,
    /// Base label token of each concept.
    pub labels: Vec<u32>,
    pub pool: Vec<usize>,
    pub queries: Vec<usize>,
    pub partner: Vec<usize>,
}

fn derangement(items: &[usize], rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = items.to_vec();
    loop {
        p.shuffle(rng);
        if p.iter().zip(items).all(|(a, b)| a != b) {
            return p;
        }
    }
}

impl Task {
    pub fn new(config: TaskConfig) -> Result<Self> {
        let c = config.concepts;
        ensure!(config.contexts >= 1 && config.contexts <= 2, "contexts must be 1 or 2");
        ensure!(config.description_len >= 1, "description_len must be positive");
        ensure!(
            config.signature_len >= 1 && config.signature_len <= config.alphabet,
            "signature_len must lie in 1..=alphabet"
        );
        ensure!((0.0..=1.0).contains(&config.signature_prob), "signature_prob must lie in [0, 1]");
        ensure!(config.pool_fraction > 0.0 && config.pool_fraction < 1.0, "pool_fraction must lie in (0, 1)");
        let pool_size = ((config.pool_fraction * c as f64).ceil() as usize).max(config.max_demos).max(2);
        ensure!(c >= config.max_demos + 1, "need C ≥ N + 1 (C = {c}, N = {})", config.max_demos);
        ensure!(c >= pool_size + 2, "too few concepts ({c}) for a pool of {pool_size} plus held-out queries");

        let mut rng = labelled(config.seed, "task", 0);
        let signatures = (0..c)
            .map(|_| {
                rand::seq::index::sample(&mut rng, config.alphabet, config.signature_len)
                    .into_iter()
                    .map(|i| FIRST_LABEL + c as u32 + i as u32)
                    .collect()
            })
            .collect();
        let mut perm: Vec<u32> = (0..c as u32).collect();
        perm.shuffle(&mut rng);
        let labels = perm.into_iter().map(|i| FIRST_LABEL + i).collect();
        let mut order: Vec<usize> = (0..c).collect();
        order.shuffle(&mut rng);
        let mut pool = order[..pool_size].to_vec();
        let mut queries = order[pool_size..].to_vec();
        pool.sort_unstable();
        queries.sort_unstable();
        let mut partner: Vec<usize> = (0..c).collect();
        for group in [&pool, &queries] {
            let p = derangement(group, &mut rng);
            for (a, b) in group.iter().zip(p) {
                partner[*a] = b;
            }
        }
        Ok(Task { config, signatures, labels, pool, queries, partner })
    }

    /// Vocabulary size the task needs.
    pub fn vocab_needed(&self) -> usize {
        FIRST_LABEL as usize + self.config.concepts + self.config.alphabet
    }

    pub fn label(&self, context: usize, concept: usize) -> u32 {
        if context == 0 {
            self.labels[concept]
        } else {
            self.labels[self.partner[concept]]
        }
    }

    pub fn is_label_token(&self, tok: u32) -> bool {
        tok >= FIRST_LABEL && tok < FIRST_LABEL + self.config.concepts as u32
    }

    pub fn description(&self, concept: usize, rng: &mut Rng) -> Vec<u32> {
        let alpha0 = FIRST_LABEL + self.config.concepts as u32;
        (0..self.config.description_len)
            .map(|_| {
                if rng.gen::<f64>() < self.config.signature_prob {
                    *self.signatures[concept].choose(rng).unwrap()
                } else {
                    alpha0 + rng.gen_range(0..self.config.alphabet as u32)
                }
            })
            .collect()
    }

    fn other(&self, group: &[usize], not: usize, rng: &mut Rng) -> usize {
        loop {
            let c = *group.choose(rng).unwrap();
            if c != not {
                return c;
            }
        }
    }

    /// N distinct pool concepts with fresh descriptions and correct labels.
    pub fn sample_demos(&self, context: usize, n: usize, rng: &mut Rng) -> Result<Vec<Demo>> {
        ensure!(n <= self.pool.len(), "{n} demonstrations requested from a pool of {}", self.pool.len());
        let concepts: Vec<usize> = self.pool.choose_multiple(rng, n).copied().collect();
        Ok(concepts
            .into_iter()
            .map(|c| Demo { concept: c, description: self.description(c, rng), label: self.label(context, c) })
            .collect())
    }

    pub fn prompt(&self, context: usize, demos: Vec<Demo>, query_concept: usize, query: Vec<u32>) -> Prompt {
        Prompt { context, demos, query_concept, query, target: self.label(context, query_concept) }
    }

    /// One run: a context, one demonstration set, and `per_concept`
    /// description samples for every held-out query concept.
    pub fn sample_run(&self, seed: u64, n_demos: usize, per_concept: usize) -> Result<Run> {
        let context = labelled(seed, "run-context", 0).gen_range(0..self.config.contexts);
        self.sample_run_in(seed, context, n_demos, per_concept)
    }

    /// [`Task::sample_run`] with the context fixed.
    pub fn sample_run_in(&self, seed: u64, context: usize, n_demos: usize, per_concept: usize) -> Result<Run> {
        ensure!(context < self.config.contexts, "context {context} out of range");
        ensure!(per_concept >= 1, "need at least one description per concept");
        let mut rng = labelled(seed, "run", 0);
        let demos = self.sample_demos(context, n_demos, &mut rng)?;
        let mut prompts = Vec::with_capacity(self.queries.len() * per_concept);
        for &q in &self.queries {
            for _ in 0..per_concept {
                let query = self.description(q, &mut rng);
                prompts.push(self.prompt(context, demos.clone(), q, query));
            }
        }
        Ok(Run { seed, context, prompts })
    }

    /// Replaces the targeted field(s) with those of another concept:
    /// description and label corruption draw each replacement from the pool
    /// (excluding the demo's own concept), query corruption from the
    /// held-out query concepts (excluding the query's own concept).
    pub fn corrupt(&self, prompt: &Prompt, condition: Corruption, rng: &mut Rng) -> Result<Prompt> {
        let mut out = prompt.clone();
        match condition {
            Corruption::Description => {
                ensure!(!prompt.demos.is_empty(), "description corruption needs at least one demonstration");
                for d in &mut out.demos {
                    let c = self.other(&self.pool, d.concept, rng);
                    d.description = self.description(c, rng);
                }
            }
            Corruption::Label => {
                ensure!(!prompt.demos.is_empty(), "label corruption needs at least one demonstration");
                for d in &mut out.demos {
                    let c = self.other(&self.pool, d.concept, rng);
                    d.label = self.label(prompt.context, c);
                }
            }
            Corruption::Query => {
                let c = self.other(&self.queries, prompt.query_concept, rng);
                out.query = self.description(c, rng);
            }
        }
        Ok(out)
    }

    /// A training prompt: random context, N demos each relabelled with
    /// probability `noise` (a third to the other context's label, the rest to
    /// another pool concept's label), and a random held-out query.
    pub fn training_prompt(&self, n: usize, noise: f64, rng: &mut Rng) -> Result<Prompt> {
        let context = rng.gen_range(0..self.config.contexts);
        let mut demos = self.sample_demos(context, n, rng)?;
        for d in &mut demos {
            let u: f64 = rng.gen();
            if u < noise / 3.0 && self.config.contexts > 1 {
                d.label = self.label(1 - context, d.concept);
            } else if u < noise {
                let c = self.other(&self.pool, d.concept, rng);
                d.label = self.label(context, c);
            }
        }
        let q = *self.queries.choose(rng).unwrap();
        let query = self.description(q, rng);
        Ok(self.prompt(context, demos, q, query))
    }
}


impl Task {
    /// `n_queries` prompts sharing one context and one demonstration set,
    /// with query concepts cycling through the held-out set.
    pub fn generate(&self, seed: u64, n_demos: usize, n_queries: usize) -> Result<(Vec<Prompt>, Vec<PromptSpans>)> {
        let mut rng = labelled(seed, "generate", 0);
        let context = rng.gen_range(0..self.config.contexts);
        let demos = self.sample_demos(context, n_demos, &mut rng)?;
        let prompts: Vec<Prompt> = (0..n_queries)
            .map(|i| {
                let q = self.queries[i % self.queries.len()];
                let query = self.description(q, &mut rng);
                self.prompt(context, demos.clone(), q, query)
            })
            .collect();
        let spans = prompts.iter().map(|p| p.spans()).collect();
        Ok((prompts, spans))
    }
}
