use crate::error::{ensure, Result};
use crate::linalg::Mat;
use crate::stats::{pearson, spearman};

/// Mean over columns of the Pearson correlation between matching columns.
pub fn gcca_alignment(ya: &Mat, yb: &Mat) -> Result<f64> {
    ensure!(ya.shape() == yb.shape(), "shape mismatch {:?} vs {:?}", ya.shape(), yb.shape());
    ensure!(ya.ncols() > 0, "alignment of empty projections");
    let mut total = 0.0;
    for j in 0..ya.ncols() {
        let a: Vec<f64> = ya.column(j).iter().copied().collect();
        let b: Vec<f64> = yb.column(j).iter().copied().collect();
        total += pearson(&a, &b).map_err(|e| crate::Error::validation(format!("column {j}: {e}")))?;
    }
    Ok(total / ya.ncols() as f64)
}

/// Representational dissimilarity matrix, D_ij = 1 − cos(Y_i, Y_j).
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    pub matrix: Mat,
}

impl Rdm {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Strict upper triangle in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.matrix[(i, j)]);
            }
        }
        out
    }
}

pub fn compute_rdm(y: &Mat) -> Result<Rdm> {
    let n = y.nrows();
    ensure!(n >= 3, "RDM needs at least 3 rows, got {n}");
    let norms: Vec<f64> = y.row_iter().map(|r| r.norm()).collect();
    ensure!(norms.iter().all(|&v| v > 0.0), "zero row: cosine undefined");
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let cos = (y.row(i).dot(&y.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            let v = 1.0 - cos;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(Rdm { matrix: d })
}

/// Spearman correlation (midranks) of the strict upper triangles.
pub fn rsa(a: &Rdm, b: &Rdm) -> Result<f64> {
    ensure!(a.n() == b.n(), "RDM size mismatch ({} vs {})", a.n(), b.n());
    ensure!(a.n() >= 3, "RSA needs at least 3 items");
    spearman(&a.upper_triangle(), &b.upper_triangle())
}
