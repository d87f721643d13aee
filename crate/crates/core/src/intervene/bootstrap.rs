use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::rng;
use crate::stats::{mean, quantile_sorted};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const MIN_RESAMPLES: usize = 1_000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Percentile bootstrap interval for the mean of `samples`.
pub fn bootstrap_ci(samples: &[f64], b: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    ensure!(!samples.is_empty(), "empty input");
    ensure!(samples.len() >= 2, "bootstrap needs at least 2 samples, got {}", samples.len());
    ensure!(b >= MIN_RESAMPLES, "need at least {MIN_RESAMPLES} resamples, got {b}");
    ensure!(level > 0.0 && level < 1.0, "level must lie in (0, 1), got {level}");
    ensure!(samples.iter().all(|x| x.is_finite()), "non-finite sample");
    let n = samples.len();
    let mut g = rng(seed);
    let mut means: Vec<f64> = (0..b)
        .map(|_| (0..n).map(|_| samples[g.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail)))
}

/// Mean effect with its bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub run_means: Vec<f64>,
    pub n_queries: usize,
}

/// Averages each run's values per query id, then per run, then bootstraps
/// across runs. A single run falls back to resampling its query means.
pub fn aggregate_runs(runs: &[Vec<(String, f64)>], b: usize, level: f64, seed: u64) -> Result<Summary> {
    ensure!(!runs.is_empty(), "empty input");
    let mut run_means = Vec::with_capacity(runs.len());
    let mut single_run_queries = Vec::new();
    let mut n_queries = 0;
    for run in runs {
        ensure!(!run.is_empty(), "run without values");
        let mut by_query: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (id, v) in run {
            ensure!(v.is_finite(), "non-finite effect value for {id}");
            by_query.entry(id.as_str()).or_default().push(*v);
        }
        let q: Vec<f64> = by_query.values().map(|v| mean(v)).collect();
        n_queries += q.len();
        run_means.push(mean(&q));
        single_run_queries = q;
    }
    let pool = if runs.len() >= 2 { &run_means } else { &single_run_queries };
    let m = mean(pool);
    let (ci_low, ci_high) = if pool.len() >= 2 { bootstrap_ci(pool, b, level, seed)? } else { (m, m) };
    Ok(Summary { mean: m, ci_low, ci_high, run_means, n_queries })
}
