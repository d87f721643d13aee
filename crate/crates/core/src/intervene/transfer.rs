use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg::{frobenius_sq, svd, Mat};
use crate::toymodel::HookedModel;

use super::effects::edit_residual;

/// Orthogonal map between the subspace coordinates of two contexts at one
/// layer, fitted on a set of training concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMap {
    pub source_context: String,
    pub target_context: String,
    pub layer: usize,
    /// r×r orthogonal.
    pub q: Mat,
    /// Concept ids whose rows (possibly several each) fitted Q.
    pub fit_concepts: Vec<String>,
}

/// Orthogonal Procrustes: the Q minimising ‖Y_src Q − Y_tgt‖_F, as U Vᵀ
/// from the SVD of Y_srcᵀ Y_tgt. Rows are concepts in a shared order.
pub fn fit_transfer_map(y_src: &Mat, y_tgt: &Mat) -> Result<Mat> {
    ensure!(
        y_src.shape() == y_tgt.shape(),
        "shape mismatch: {:?} vs {:?}",
        y_src.shape(),
        y_tgt.shape()
    );
    let (m, r) = y_src.shape();
    ensure!(r >= 1, "empty basis");
    ensure!(m >= r, "need at least r = {r} fit concepts, got {m}");
    let c = y_src.transpose() * y_tgt;
    let scale = (frobenius_sq(y_src) * frobenius_sq(y_tgt)).sqrt();
    if !(frobenius_sq(&c).sqrt() > 1e-12 * scale) {
        return Err(Error::numerical("degenerate cross-covariance"));
    }
    let dec = svd(&c)?;
    Ok(&dec.u * dec.v.transpose())
}

impl TransferMap {
    pub fn fit(
        source_context: impl Into<String>,
        target_context: impl Into<String>,
        layer: usize,
        y_src: &Mat,
        y_tgt: &Mat,
        fit_concepts: Vec<String>,
    ) -> Result<Self> {
        ensure!(!fit_concepts.is_empty(), "no fit concepts");
        Ok(TransferMap {
            source_context: source_context.into(),
            target_context: target_context.into(),
            layer,
            q: fit_transfer_map(y_src, y_tgt)?,
            fit_concepts,
        })
    }

    /// ‖QᵀQ − I‖_max.
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.q.transpose() * &self.q - Mat::identity(self.q.ncols(), self.q.ncols());
        g.amax()
    }

    pub fn is_fit_concept(&self, id: &str) -> bool {
        self.fit_concepts.iter().any(|c| c == id)
    }
}

/// W_tgt Q W_srcᵀ (h_a − h_b).
pub fn transfer_offset(w_src: &Mat, w_tgt: &Mat, q: &Mat, h_a: &[f64], h_b: &[f64]) -> Result<Vec<f64>> {
    let d = w_src.nrows();
    let r = w_src.ncols();
    ensure!(w_tgt.shape() == (d, r), "source and target bases differ in shape");
    ensure!(q.shape() == (r, r), "map is {:?}, expected {r}×{r}", q.shape());
    ensure!(h_a.len() == d && h_b.len() == d, "offset states must have dimension {d}");
    let diff = nalgebra::DVector::from_iterator(d, h_a.iter().zip(h_b).map(|(a, b)| a - b));
    let coords = w_src.transpose() * diff;
    Ok((w_tgt * (q * coords)).iter().copied().collect())
}

/// One held-out offset pair applied to a target-context prompt.
#[derive(Debug, Clone, Copy)]
pub struct TransferProbe<'a> {
    /// Target-context prompt whose query is q_b.
    pub target_tokens: &'a [u32],
    pub q_a: &'a str,
    pub q_b: &'a str,
    /// Source-context final-position states of q_a and q_b at the map's layer.
    pub h_a: &'a [f64],
    pub h_b: &'a [f64],
    /// Target-context labels of q_a and q_b.
    pub y_a: u32,
    pub y_b: u32,
}

/// Adds the mapped source offset at the map's layer and returns the change
/// in the gap log f[y_a] − log f[y_b] on the target prompt.
pub fn transfer_patch<M: HookedModel + ?Sized>(
    model: &M,
    map: &TransferMap,
    w_src: &Mat,
    w_tgt: &Mat,
    probe: &TransferProbe<'_>,
) -> Result<f64> {
    ensure!(
        !map.is_fit_concept(probe.q_a) && !map.is_fit_concept(probe.q_b),
        "offset concepts in fit set"
    );
    ensure!(map.layer <= model.num_layers(), "layer {} out of range", map.layer);
    ensure!(w_src.nrows() == model.dim(), "basis dimension does not match model");
    let v = model.vocab();
    ensure!(
        (probe.y_a as usize) < v && (probe.y_b as usize) < v,
        "token ids missing from vocabulary"
    );
    let add = transfer_offset(w_src, w_tgt, &map.q, probe.h_a, probe.h_b)?;
    let before = model.trace(probe.target_tokens)?;
    let after = edit_residual(model, probe.target_tokens, |layer, h| {
        if layer == map.layer {
            for (x, a) in h.iter_mut().zip(&add) {
                *x += a;
            }
        }
    })?;
    let gap = |lp: &[f64]| lp[probe.y_a as usize] - lp[probe.y_b as usize];
    Ok(gap(&after.log_probs) - gap(&before.log_probs))
}
