use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::task::NEWLINE;
use super::HookedModel;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub tokens: Vec<u32>,
    pub gold: Vec<u32>,
    #[serde(default)]
    pub synonyms: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub generated: Vec<u32>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub records: Vec<EvalRecord>,
}

/// Greedy continuation, stopping after a newline or `max_new` tokens.
pub fn greedy_decode<M: HookedModel + ?Sized>(model: &M, prompt: &[u32], max_new: usize) -> Result<Vec<u32>> {
    let mut tokens = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        let tr = model.trace(&tokens)?;
        let next = tr
            .log_probs
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0 as u32;
        out.push(next);
        if next == NEWLINE {
            break;
        }
        tokens.push(next);
    }
    Ok(out)
}

/// Exact match after truncating at the first newline: the generation must
/// equal the gold sequence or one of its synonyms.
pub fn score_generation(generated: &[u32], gold: &[u32], synonyms: &[Vec<u32>]) -> bool {
    let cut = generated.iter().position(|&t| t == NEWLINE).unwrap_or(generated.len());
    let answer = &generated[..cut];
    answer == gold || synonyms.iter().any(|s| s.as_slice() == answer)
}

pub fn evaluate_exact_match<M: HookedModel + ?Sized>(model: &M, items: &[EvalItem], max_new: usize) -> Result<EvalReport> {
    let records: Vec<EvalRecord> = items
        .par_iter()
        .map(|it| {
            let generated = greedy_decode(model, &it.tokens, max_new)?;
            let correct = score_generation(&generated, &it.gold, &it.synonyms);
            Ok(EvalRecord { generated, correct })
        })
        .collect::<Result<_>>()?;
    let accuracy = if records.is_empty() {
        0.0
    } else {
        records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64
    };
    Ok(EvalReport { accuracy, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newline_truncation_rules() {
        assert!(score_generation(&[7, NEWLINE], &[7], &[]));
        assert!(score_generation(&[9, NEWLINE], &[7], &[vec![9]]));
        assert!(!score_generation(&[7, 8, NEWLINE], &[7], &[]));
        assert!(!score_generation(&[NEWLINE], &[7], &[]));
    }
}
