use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::{ensure_orthonormal, qr_basis, Mat};
use crate::rng::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorOrigin {
    Gcca,
    Random,
    Transferred,
}

/// Orthogonal projector P = W Wᵀ onto an r-dimensional subspace of the
/// residual stream at one layer. P itself is never formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub layer: usize,
    /// d×r with orthonormal columns.
    pub w: Mat,
    pub origin: ProjectorOrigin,
}

impl Projector {
    pub fn new(layer: usize, w: Mat, origin: ProjectorOrigin) -> Result<Self> {
        ensure!(w.ncols() > 0, "empty basis");
        ensure_orthonormal(&w, 1e-6, "projector basis")?;
        Ok(Projector { layer, w, origin })
    }

    /// Projector onto the column span of an arbitrary full-rank matrix.
    pub fn from_span(layer: usize, span: &Mat, origin: ProjectorOrigin) -> Result<Self> {
        ensure!(span.ncols() > 0, "empty basis");
        Self::new(layer, qr_basis(span)?, origin)
    }

    /// P = I on ℝ^d.
    pub fn full(layer: usize, d: usize, origin: ProjectorOrigin) -> Self {
        Projector { layer, w: Mat::identity(d, d), origin }
    }

    pub fn with_layer(mut self, layer: usize) -> Self {
        self.layer = layer;
        self
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    /// W(Wᵀh).
    pub fn project(&self, h: &[f64]) -> Vec<f64> {
        let (d, r) = self.w.shape();
        let mut coef = vec![0.0; r];
        for (j, c) in coef.iter_mut().enumerate() {
            let col = self.w.column(j);
            *c = (0..d).map(|i| col[i] * h[i]).sum();
        }
        let mut out = vec![0.0; d];
        for (j, c) in coef.iter().enumerate() {
            let col = self.w.column(j);
            for i in 0..d {
                out[i] += col[i] * c;
            }
        }
        out
    }

    /// (h_par, h_perp) with h_par = W(Wᵀh) and h_perp = h − h_par.
    pub fn decompose(&self, h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure!(h.len() == self.dim(), "dimension mismatch: vector {} vs projector {}", h.len(), self.dim());
        let par = self.project(h);
        let perp = h.iter().zip(&par).map(|(a, b)| a - b).collect();
        Ok((par, perp))
    }
}

pub fn decompose(h: &[f64], proj: &Projector) -> Result<(Vec<f64>, Vec<f64>)> {
    proj.decompose(h)
}

/// Orthonormal basis from the QR factor of a seeded d×r standard-normal
/// matrix (layer 0 until assigned with [`Projector::with_layer`]).
pub fn random_subspace(d: usize, r: usize, seed: u64) -> Result<Projector> {
    ensure!(r >= 1, "empty basis");
    ensure!(r <= d, "rank {r} exceeds dimension {d}");
    let mut g = rng(seed);
    let m = Mat::from_fn(d, r, |_, _| StandardNormal.sample(&mut g));
    Projector::new(0, qr_basis(&m)?, ProjectorOrigin::Random)
}
