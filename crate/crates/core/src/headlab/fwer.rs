use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::Mat;
use crate::rng::substream;
use crate::stats::quantile;

pub const DEFAULT_FWER_PERMUTATIONS: usize = 5000;
pub const MIN_FWER_PERMUTATIONS: usize = 1000;
pub const DEFAULT_FWER_ALPHA: f64 = 0.05;

/// Mean per-head CIEs with a family-wise significance mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEffectMatrix {
    /// L×K, rows are layers 1..=L.
    pub cie: Vec<Vec<f64>>,
    pub condition: String,
    pub significant: Vec<Vec<bool>>,
    pub threshold: f64,
    pub n_perm: usize,
    pub n_queries: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl HeadEffectMatrix {
    /// Significant heads as (layer, head) with 1-based layers.
    pub fn flagged(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (l, row) in self.significant.iter().enumerate() {
            for (k, &s) in row.iter().enumerate() {
                if s {
                    out.push((l + 1, k));
                }
            }
        }
        out
    }
}

/// Max-statistic sign-flip test over heads.
///
/// `per_query` holds one L×K CIE matrix per query. Each permutation flips
/// the sign of every query's matrix as a whole, recomputes the per-head
/// means and records their maximum; the cutoff is the (1−α) quantile of
/// those maxima, clamped at 0. Flipping the mean matrix entrywise instead
/// would make the null maximum equal the largest |mean| in half of all
/// rounds, so no head could ever clear it.
pub fn fwer_sign_flip(
    per_query: &[Mat],
    condition: &str,
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<HeadEffectMatrix> {
    ensure!(!per_query.is_empty(), "empty matrix");
    let (l, k) = per_query[0].shape();
    ensure!(l > 0 && k > 0, "empty matrix");
    ensure!(per_query.iter().all(|m| m.shape() == (l, k)), "per-query CIE matrices differ in shape");
    ensure!(per_query.iter().all(|m| m.iter().all(|x| x.is_finite())), "non-finite CIE");
    ensure!(n_perm >= MIN_FWER_PERMUTATIONS, "need at least {MIN_FWER_PERMUTATIONS} permutations, got {n_perm}");
    ensure!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1), got {alpha}");
    let n = per_query.len();
    let inv = 1.0 / n as f64;
    let mut mean = Mat::zeros(l, k);
    for m in per_query {
        mean += m;
    }
    mean *= inv;
    let maxima: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|round| {
            let mut g = substream(seed, round as u64);
            let mut acc = Mat::zeros(l, k);
            for m in per_query {
                if g.gen::<bool>() {
                    acc += m;
                } else {
                    acc -= m;
                }
            }
            acc.max() * inv
        })
        .collect();
    let threshold = quantile(&maxima, 1.0 - alpha).max(0.0);
    let cie: Vec<Vec<f64>> = (0..l).map(|i| (0..k).map(|j| mean[(i, j)]).collect()).collect();
    let significant = cie.iter().map(|row| row.iter().map(|&c| c > threshold).collect()).collect();
    Ok(HeadEffectMatrix {
        cie,
        condition: condition.to_string(),
        significant,
        threshold,
        n_perm,
        n_queries: n,
        alpha,
        seed,
    })
}
