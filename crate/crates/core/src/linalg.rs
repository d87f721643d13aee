//! Dense linear-algebra helpers over `nalgebra::DMatrix<f64>`.
//!
//! Decompositions return factors sorted by decreasing value, and eigenvectors
//! carry a canonical sign (largest-magnitude entry positive) so results are
//! reproducible and equivariant under row permutations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure, Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold on |R_ii| below which a QR factor counts as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Max-abs deviation of `WᵀW` from the identity.
pub fn orthonormality_error(w: &Mat) -> f64 {
    let g = w.transpose() * w;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn ensure_orthonormal(w: &Mat, tol: f64, what: &str) -> Result<()> {
    let err = orthonormality_error(w);
    ensure!(err <= tol, "{what} is not orthonormal (max |WᵀW - I| = {err:.3e})");
    Ok(())
}

pub fn ensure_finite(x: &Mat, what: &str) -> Result<()> {
    ensure!(x.iter().all(|v| v.is_finite()), "{what} contains NaN or infinite entries");
    Ok(())
}

/// Orthonormal basis of the column space of `x` (n×k, n ≥ k) via Householder QR.
pub fn qr_basis(x: &Mat) -> Result<Mat> {
    let (n, k) = x.shape();
    ensure!(k > 0, "cannot orthonormalise an empty basis");
    ensure!(n >= k, "basis has more columns ({k}) than rows ({n})");
    ensure_finite(x, "basis")?;
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
    let scale = diag.iter().cloned().fold(0.0, f64::max);
    ensure!(
        scale > 0.0 && diag.iter().all(|&v| v > RANK_TOL * scale),
        "rank-deficient basis"
    );
    let mut q = qr.q();
    // Fix signs so that R has a positive diagonal; makes the factor unique.
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
        }
    }
    Ok(q)
}

/// Thin SVD `x = U diag(s) Vᵀ` with singular values sorted descending.
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

pub fn svd(x: &Mat) -> Result<Svd> {
    ensure_finite(x, "matrix")?;
    let dec = x.clone().svd(true, true);
    let u = dec.u.ok_or_else(|| Error::numerical("SVD did not return U"))?;
    let vt = dec.v_t.ok_or_else(|| Error::numerical("SVD did not return Vᵀ"))?;
    let mut order: Vec<usize> = (0..dec.singular_values.len()).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let s = order.iter().map(|&i| dec.singular_values[i]).collect();
    let u = Mat::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = Mat::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    Ok(Svd { u, s, v })
}

/// Singular values only, sorted descending.
pub fn singular_values(x: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = x.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen(s: &Mat) -> (Vec<f64>, Mat) {
    let dec = SymmetricEigen::new(s.clone());
    let mut order: Vec<usize> = (0..dec.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| dec.eigenvalues[b].total_cmp(&dec.eigenvalues[a]));
    let vals = order.iter().map(|&i| dec.eigenvalues[i]).collect();
    let mut vecs = Mat::from_fn(s.nrows(), order.len(), |r, c| dec.eigenvectors[(r, order[c])]);
    canonicalise_signs(&mut vecs);
    (vals, vecs)
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn sym_eigenvalues(s: &Mat) -> Vec<f64> {
    let mut v: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn canonicalise_signs(m: &mut Mat) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col.len() > 0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// `(S + Sᵀ)/2`.
pub fn symmetrise(s: &Mat) -> Mat {
    (s + s.transpose()) * 0.5
}

pub fn frobenius_sq(m: &Mat) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    ensure!(!rows.is_empty(), "empty matrix");
    let c = rows[0].len();
    ensure!(rows.iter().all(|r| r.len() == c), "ragged rows");
    Ok(Mat::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
