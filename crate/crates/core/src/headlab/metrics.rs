use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg::{frobenius_sq, Mat};

use super::HeadId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSubspaceMetrics {
    pub head: HeadId,
    pub alpha: f64,
    /// `None` when the head's projected update vanishes.
    pub align: Option<f64>,
    pub reference_layer: usize,
}

fn check_shapes(a: &Mat, w_ref: &Mat, y_ref: &Mat) -> Result<()> {
    ensure!(a.ncols() == w_ref.nrows(), "head outputs have dimension {}, basis {}", a.ncols(), w_ref.nrows());
    ensure!(
        y_ref.shape() == (a.nrows(), w_ref.ncols()),
        "reference projection is {:?}, expected {:?}",
        y_ref.shape(),
        (a.nrows(), w_ref.ncols())
    );
    Ok(())
}

/// α = ‖A W_ref‖_F² / ‖Y_ref‖_F², the head's projected energy relative to
/// the total subspace energy of the reference layer.
pub fn head_subspace_contribution(a: &Mat, w_ref: &Mat, y_ref: &Mat) -> Result<f64> {
    check_shapes(a, w_ref, y_ref)?;
    let den = frobenius_sq(y_ref);
    if den == 0.0 {
        return Err(Error::numerical("zero reference projection"));
    }
    Ok(frobenius_sq(&(a * w_ref)) / den)
}

/// Frobenius cosine between ΔY = A W_ref and Y_ref.
pub fn head_subspace_alignment(a: &Mat, w_ref: &Mat, y_ref: &Mat) -> Result<f64> {
    check_shapes(a, w_ref, y_ref)?;
    let dy = a * w_ref;
    let (nd, ny) = (frobenius_sq(&dy).sqrt(), frobenius_sq(y_ref).sqrt());
    if nd == 0.0 {
        return Err(Error::numerical("undefined alignment: zero head update"));
    }
    if ny == 0.0 {
        return Err(Error::numerical("zero reference projection"));
    }
    Ok((dy.dot(y_ref) / (nd * ny)).clamp(-1.0, 1.0))
}

/// Basis layer for a head at `layer`: its own layer, or the first
/// available basis layer ℓ* for heads below it.
pub fn reference_layer(layer: usize, available: &[usize]) -> Result<usize> {
    let first = *available.iter().min().ok_or_else(|| Error::validation("no subspace layers"))?;
    if layer < first {
        return Ok(first);
    }
    ensure!(available.contains(&layer), "no subspace basis for layer {layer}");
    Ok(layer)
}

/// α and align for one head given its stacked outputs.
pub fn head_subspace_metrics(
    head: HeadId,
    a: &Mat,
    reference_layer: usize,
    w_ref: &Mat,
    y_ref: &Mat,
) -> Result<HeadSubspaceMetrics> {
    let alpha = head_subspace_contribution(a, w_ref, y_ref)?;
    let align = match head_subspace_alignment(a, w_ref, y_ref) {
        Ok(v) => Some(v),
        Err(Error::Numerical(m)) if m.starts_with("undefined") => None,
        Err(e) => return Err(e),
    };
    Ok(HeadSubspaceMetrics { head, alpha, align, reference_layer })
}
