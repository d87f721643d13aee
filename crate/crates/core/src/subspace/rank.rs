use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gcca::{GccaOptions, ViewOperators};
use crate::error::{ensure, Result};
use crate::linalg::sym_eigenvalues;
use crate::rng::substream;
use crate::stats::quantile;
use crate::tensorstore::LayerActivations;

pub const DEFAULT_PERMUTATIONS: usize = 500;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const MIN_PERMUTATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelection {
    pub r_hat: usize,
    pub r_max: usize,
    /// Top r_max eigenvalues of the unpermuted aggregate.
    pub observed: Vec<f64>,
    /// (1−α) quantile of each null column.
    pub thresholds: Vec<f64>,
    /// M rows of r_max null eigenvalues, in round order.
    pub null_spectra: Vec<Vec<f64>>,
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Permutation test for the number of shared components. Round m shuffles
/// each layer's rows independently with the RNG substream (seed, m), which
/// breaks cross-layer correspondence but keeps each layer's covariance.
pub fn gcca_rank_select(
    views: &[LayerActivations],
    r_max: usize,
    permutations: usize,
    alpha: f64,
    seed: u64,
    options: GccaOptions,
) -> Result<RankSelection> {
    ensure!(
        permutations >= MIN_PERMUTATIONS,
        "at least {MIN_PERMUTATIONS} permutations required, got {permutations}"
    );
    ensure!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1), got {alpha}");
    ensure!(r_max >= 1, "r_max must be at least 1");
    ensure!(!views.is_empty(), "GCCA needs at least one view");
    let n = views[0].n();
    ensure!(n >= r_max, "n = {n} is smaller than r_max = {r_max}");
    let min_d = views.iter().map(|v| v.d()).min().unwrap();
    ensure!(r_max <= n.min(min_d), "r_max {r_max} exceeds min(n, d) = {}", n.min(min_d));

    let ops = ViewOperators::new(views, options)?;
    let observed: Vec<f64> = sym_eigenvalues(&ops.aggregate())[..r_max].to_vec();
    let null_spectra: Vec<Vec<f64>> = (0..permutations)
        .into_par_iter()
        .map(|m| {
            let mut rng = substream(seed, m as u64);
            let perms: Vec<Vec<usize>> = (0..ops.len())
                .map(|_| {
                    let mut p: Vec<usize> = (0..n).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            sym_eigenvalues(&ops.permuted_aggregate(&perms))[..r_max].to_vec()
        })
        .collect();
    let thresholds: Vec<f64> = (0..r_max)
        .map(|i| {
            let col: Vec<f64> = null_spectra.iter().map(|row| row[i]).collect();
            quantile(&col, 1.0 - alpha)
        })
        .collect();
    let r_hat = observed.iter().zip(&thresholds).filter(|(l, q)| l > q).count();
    Ok(RankSelection { r_hat, r_max, observed, thresholds, null_spectra, permutations, alpha, seed })
}
