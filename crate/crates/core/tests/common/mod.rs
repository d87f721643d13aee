//! Test fixtures and brute-force oracles. The oracles use plain loops and
//! Gram–Schmidt on purpose: none of them calls into the crate's linear
//! algebra, so agreement is evidence rather than tautology.
#![allow(dead_code)]

use conceptlens::linalg::Mat;
use conceptlens::rng::rng;
use conceptlens::toymodel::{ModelConfig, Task, TaskConfig, ToyModel};
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(n: usize, d: usize, seed: u64) -> Mat {
    let mut g = rng(seed);
    Mat::from_fn(n, d, |_, _| StandardNormal.sample(&mut g))
}

/// Modified Gram–Schmidt; panics on (numerically) dependent columns.
pub fn gram_schmidt(x: &Mat) -> Mat {
    let (n, k) = x.shape();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v: Vec<f64> = (0..n).map(|i| x[(i, j)]).collect();
        for _ in 0..2 {
            for u in &q {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= dot * ui;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(norm > 1e-10, "dependent columns");
        q.push(v.into_iter().map(|a| a / norm).collect());
    }
    Mat::from_fn(n, k, |i, j| q[j][i])
}

pub fn orthonormal(d: usize, r: usize, seed: u64) -> Mat {
    gram_schmidt(&gaussian(d, r, seed))
}

/// ‖UᵀV‖_F² / min(k1, k2): the sum of squared principal cosines equals the
/// squared Frobenius norm of UᵀV for orthonormal U, V.
pub fn naive_overlap(u: &Mat, v: &Mat) -> f64 {
    let mut s = 0.0;
    for a in 0..u.ncols() {
        for b in 0..v.ncols() {
            let mut dot = 0.0;
            for i in 0..u.nrows() {
                dot += u[(i, a)] * v[(i, b)];
            }
            s += dot * dot;
        }
    }
    s / u.ncols().min(v.ncols()) as f64
}

/// Ranks by counting, ties get the average of the positions they span.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn naive_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn naive_spearman(a: &[f64], b: &[f64]) -> f64 {
    naive_pearson(&naive_ranks(a), &naive_ranks(b))
}

/// Upper triangle of 1 − cos between rows, row-major.
pub fn naive_rdm_upper(y: &Mat) -> Vec<f64> {
    let n = y.nrows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
            for c in 0..y.ncols() {
                dot += y[(i, c)] * y[(j, c)];
                ni += y[(i, c)] * y[(i, c)];
                nj += y[(j, c)] * y[(j, c)];
            }
            out.push(1.0 - dot / (ni.sqrt() * nj.sqrt()));
        }
    }
    out
}

fn naive_product(a: &Mat, w: &Mat) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..w.ncols()).map(|c| (0..a.ncols()).map(|j| a[(i, j)] * w[(j, c)]).sum()).collect())
        .collect()
}

/// (α, align) computed entry by entry.
pub fn naive_alpha_align(a: &Mat, w: &Mat, y: &Mat) -> (f64, f64) {
    let dy = naive_product(a, w);
    let (mut num, mut den, mut cross) = (0.0, 0.0, 0.0);
    for i in 0..y.nrows() {
        for c in 0..y.ncols() {
            num += dy[i][c] * dy[i][c];
            den += y[(i, c)] * y[(i, c)];
            cross += dy[i][c] * y[(i, c)];
        }
    }
    (num / den, cross / (num.sqrt() * den.sqrt()))
}

pub fn small_task(seed: u64) -> Task {
    Task::new(TaskConfig {
        concepts: 12,
        alphabet: 24,
        description_len: 3,
        signature_len: 2,
        max_demos: 3,
        seed,
        ..TaskConfig::default()
    })
    .unwrap()
}

/// Untrained model sized for [`small_task`].
pub fn small_model(layers: usize, seed: u64) -> ToyModel {
    ToyModel::new(ModelConfig { vocab: 48, dim: 16, layers, heads: 2, context_len: 64, mlp_mult: 2, seed }).unwrap()
}
