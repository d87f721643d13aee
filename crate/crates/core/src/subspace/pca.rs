use crate::error::{ensure, Result};
use crate::linalg::{svd, Mat};
use crate::tensorstore::LayerActivations;

/// Leading right-singular directions of a centered activation matrix.
#[derive(Debug, Clone)]
pub struct PcBasis {
    pub layer: usize,
    /// d×k, orthonormal columns.
    pub basis: Mat,
    pub explained_fraction: f64,
    pub k: usize,
    pub singular_values: Vec<f64>,
}

/// Smallest k whose cumulative squared singular values reach `frac` of the total.
pub fn svd_variance_basis(x: &LayerActivations, frac: f64) -> Result<PcBasis> {
    ensure!(frac > 0.0 && frac <= 1.0, "variance fraction must lie in (0, 1], got {frac}");
    ensure!(x.centered, "svd_variance_basis requires centered input");
    let (n, d) = (x.n(), x.d());
    ensure!(n >= 2, "need at least 2 rows");
    let dec = svd(&x.data)?;
    let energy: Vec<f64> = dec.s.iter().map(|s| s * s).collect();
    let mut cum = Vec::with_capacity(energy.len());
    let mut acc = 0.0;
    for e in &energy {
        acc += e;
        cum.push(acc);
    }
    let total = acc;
    ensure!(total > 0.0, "activation matrix is identically zero");
    let k_max = (n - 1).min(d).min(cum.len());
    let k = cum.iter().position(|&c| c >= frac * total).map_or(k_max, |i| i + 1).min(k_max);
    Ok(PcBasis {
        layer: x.layer,
        basis: dec.v.columns(0, k).into_owned(),
        explained_fraction: cum[k - 1] / total,
        k,
        singular_values: dec.s,
    })
}
