use crate::error::{ensure, Result};
use crate::linalg::{ensure_orthonormal, qr_basis, singular_values, Mat};

pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Mean squared cosine of the k = min(k1, k2) principal angles between
/// span(U) and span(V), read off the singular values of UᵀV.
pub fn principal_angle_overlap(u: &Mat, v: &Mat) -> Result<f64> {
    ensure!(u.ncols() > 0 && v.ncols() > 0, "principal angles need non-empty bases");
    ensure!(u.nrows() == v.nrows(), "ambient dimension mismatch ({} vs {})", u.nrows(), v.nrows());
    ensure_orthonormal(u, ORTHONORMAL_TOL, "first basis")?;
    ensure_orthonormal(v, ORTHONORMAL_TOL, "second basis")?;
    let k = u.ncols().min(v.ncols());
    let s = singular_values(&(u.transpose() * v));
    let sum: f64 = s.iter().take(k).map(|c| c.min(1.0).powi(2)).sum();
    Ok((sum / k as f64).clamp(0.0, 1.0))
}

/// Overlap of the column spaces of two (not necessarily orthonormal)
/// projection matrices, orthonormalised by QR first.
pub fn context_subspace_overlap(wa: &Mat, wb: &Mat) -> Result<f64> {
    principal_angle_overlap(&qr_basis(wa)?, &qr_basis(wb)?)
}
