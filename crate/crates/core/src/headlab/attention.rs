use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensorstore::{PromptSpans, SpanClass};
use crate::toymodel::HookedModel;

use super::HeadId;

/// Last-position attention mass of one head split over the five span
/// classes, with tokens outside every span collected in `other`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanAttribution {
    pub head: HeadId,
    /// Indexed by [`SpanClass::index`].
    pub mass: [f64; 5],
    pub other: f64,
}

impl SpanAttribution {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.other
    }

    pub fn of(&self, class: SpanClass) -> f64 {
        self.mass[class.index()]
    }
}

/// Splits one attention row over span classes; returns (class masses, other).
pub fn span_mass(weights: &[f64], spans: &PromptSpans) -> Result<([f64; 5], f64)> {
    spans.validate()?;
    ensure!(
        weights.len() == spans.prompt_len,
        "attention row has {} entries for a prompt of length {}",
        weights.len(),
        spans.prompt_len
    );
    let mut mass = [0.0; 5];
    let mut covered = 0.0;
    for s in &spans.spans {
        let m: f64 = weights[s.start..s.end].iter().sum();
        mass[s.class.index()] += m;
        covered += m;
    }
    let total: f64 = weights.iter().sum();
    Ok((mass, (total - covered).max(0.0)))
}

pub fn attention_mass_by_span<M: HookedModel + ?Sized>(
    model: &M,
    tokens: &[u32],
    spans: &PromptSpans,
    head: HeadId,
) -> Result<SpanAttribution> {
    head.validate(model)?;
    let trace = model.run(tokens, &mut crate::toymodel::NoHook, true)?;
    let att = trace.attention.expect("attention requested");
    let (mass, other) = span_mass(&att[head.layer - 1][head.head], spans)?;
    Ok(SpanAttribution { head, mass, other })
}

/// Per-head span attribution averaged over prompts, heads layer-major.
pub fn span_attribution<M: HookedModel + ?Sized>(
    model: &M,
    prompts: &[(Vec<u32>, PromptSpans)],
) -> Result<Vec<SpanAttribution>> {
    ensure!(!prompts.is_empty(), "no prompts");
    let heads = HeadId::all(model);
    let per_prompt: Vec<Vec<([f64; 5], f64)>> = prompts
        .par_iter()
        .map(|(tokens, spans)| {
            let trace = model.run(tokens, &mut crate::toymodel::NoHook, true)?;
            let att = trace.attention.expect("attention requested");
            heads.iter().map(|h| span_mass(&att[h.layer - 1][h.head], spans)).collect()
        })
        .collect::<Result<_>>()?;
    let n = prompts.len() as f64;
    Ok(heads
        .iter()
        .enumerate()
        .map(|(i, &head)| {
            let mut mass = [0.0; 5];
            let mut other = 0.0;
            for p in &per_prompt {
                for (m, x) in mass.iter_mut().zip(p[i].0) {
                    *m += x / n;
                }
                other += p[i].1 / n;
            }
            SpanAttribution { head, mass, other }
        })
        .collect())
}
