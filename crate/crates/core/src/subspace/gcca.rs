use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg::{qr_basis, svd, sym_eigen, symmetrise, Mat};
use crate::tensorstore::LayerActivations;

pub const DEFAULT_RIDGE: f64 = 0.01;

/// Optional per-view rescaling applied after centering and before the ridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewScaling {
    /// Use each centered view as is.
    None,
    /// Divide each view by its root-mean-square row norm, so the ridge acts on
    /// a common scale across layers whose activation norms differ.
    UnitRms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GccaOptions {
    pub ridge: f64,
    pub scaling: ViewScaling,
}

impl Default for GccaOptions {
    fn default() -> Self {
        GccaOptions { ridge: DEFAULT_RIDGE, scaling: ViewScaling::None }
    }
}

struct ViewFactor {
    /// n×m left singular vectors of the (scaled) view.
    u: Mat,
    /// d×m right singular vectors.
    v: Mat,
    /// σ/(σ²+λ): maps UᵀG to ridge weights.
    coef: Vec<f64>,
    /// X(XᵀX+λI)⁻¹Xᵀ = U diag(σ²/(σ²+λ)) Uᵀ.
    projector: Mat,
    scale: f64,
}

/// Ridge projection operators of a set of views sharing row order. Built
/// once; reused by the fit and by every permutation round.
pub struct ViewOperators {
    pub layers: Vec<usize>,
    pub n: usize,
    pub options: GccaOptions,
    factors: Vec<ViewFactor>,
}

impl ViewOperators {
    pub fn new(views: &[LayerActivations], options: GccaOptions) -> Result<Self> {
        ensure!(!views.is_empty(), "GCCA needs at least one view");
        ensure!(options.ridge >= 0.0 && options.ridge.is_finite(), "ridge must be non-negative");
        let n = views[0].n();
        ensure!(n >= 2, "GCCA needs at least 2 rows");
        for v in views {
            ensure!(v.n() == n, "row-order mismatch: layer {} has {} rows, expected {n}", v.layer, v.n());
            ensure!(v.centered, "layer {} is not centered", v.layer);
            if let (Some(a), Some(b)) = (&views[0].row_ids, &v.row_ids) {
                ensure!(a == b, "row-order mismatch between layers {} and {}", views[0].layer, v.layer);
            }
        }
        let lambda = options.ridge;
        let mut factors = Vec::with_capacity(views.len());
        for v in views {
            let scale = match options.scaling {
                ViewScaling::None => 1.0,
                ViewScaling::UnitRms => {
                    let ms = v.data.norm_squared() / n as f64;
                    if ms > 0.0 {
                        ms.sqrt()
                    } else {
                        1.0
                    }
                }
            };
            let dec = svd(&(&v.data / scale))?;
            let m = dec.s.len();
            let mut shrink = Vec::with_capacity(m);
            let mut coef = Vec::with_capacity(m);
            for &s in &dec.s {
                let den = s * s + lambda;
                if den > 0.0 && s > 0.0 {
                    shrink.push(s * s / den);
                    coef.push(s / den);
                } else {
                    shrink.push(0.0);
                    coef.push(0.0);
                }
            }
            let mut us = dec.u.clone();
            for (j, mut col) in us.column_iter_mut().enumerate() {
                col *= shrink[j];
            }
            let projector = symmetrise(&(&us * dec.u.transpose()));
            factors.push(ViewFactor { u: dec.u, v: dec.v, coef, projector, scale });
        }
        Ok(ViewOperators { layers: views.iter().map(|v| v.layer).collect(), n, options, factors })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn projector(&self, i: usize) -> &Mat {
        &self.factors[i].projector
    }

    /// S = Σ_ℓ P_ℓ, symmetrised.
    pub fn aggregate(&self) -> Mat {
        let mut s = Mat::zeros(self.n, self.n);
        for f in &self.factors {
            s += &f.projector;
        }
        symmetrise(&s)
    }

    /// Aggregate after permuting the rows of view ℓ by `perms[ℓ]`:
    /// P_ℓ becomes Π P_ℓ Πᵀ, i.e. entry (i, j) reads P_ℓ[π(i), π(j)].
    pub fn permuted_aggregate(&self, perms: &[Vec<usize>]) -> Mat {
        let n = self.n;
        let mut s = Mat::zeros(n, n);
        for (f, p) in self.factors.iter().zip(perms) {
            for j in 0..n {
                let src = f.projector.column(p[j]);
                let mut dst = s.column_mut(j);
                for i in 0..n {
                    dst[i] += src[p[i]];
                }
            }
        }
        symmetrise(&s)
    }

    /// Ridge solution (XᵀX+λI)⁻¹XᵀG for view `i`, expressed against the
    /// unscaled centered view so that `X_ℓ W_ℓ` approximates G.
    pub fn weights(&self, i: usize, g: &Mat) -> Mat {
        let f = &self.factors[i];
        let mut utg = f.u.transpose() * g;
        for (k, mut row) in utg.row_iter_mut().enumerate() {
            row *= f.coef[k];
        }
        (&f.v * utg) / f.scale
    }
}

/// GCCA result: shared latent G and per-layer maps W_ℓ with X_ℓ W_ℓ ≈ G.
#[derive(Debug, Clone)]
pub struct SharedSubspace {
    pub layers: Vec<usize>,
    /// n×r, orthonormal columns.
    pub g: Mat,
    /// d×r per layer, in `layers` order.
    pub w: Vec<Mat>,
    /// Top-r eigenvalues of S, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Full spectrum of S, non-increasing.
    pub spectrum: Vec<f64>,
    pub ridge: f64,
    pub scaling: ViewScaling,
    pub rank: usize,
}

impl SharedSubspace {
    pub fn position(&self, layer: usize) -> Option<usize> {
        self.layers.iter().position(|&l| l == layer)
    }

    pub fn weights(&self, layer: usize) -> Result<&Mat> {
        self.position(layer)
            .map(|i| &self.w[i])
            .ok_or_else(|| Error::validation(format!("layer {layer} is not part of the shared subspace")))
    }

    /// Orthonormal basis of span(W_ℓ), as used for projectors.
    pub fn basis(&self, layer: usize) -> Result<Mat> {
        qr_basis(self.weights(layer)?)
    }

    /// Y_ℓ = X_ℓ W_ℓ.
    pub fn project(&self, layer: usize, x: &Mat) -> Result<Mat> {
        let w = self.weights(layer)?;
        ensure!(x.ncols() == w.nrows(), "dimension mismatch projecting layer {layer}");
        Ok(x * w)
    }
}

/// Fits the shared latent as the top-r eigenvectors of
/// S = Σ_ℓ X_ℓ(X_ℓᵀX_ℓ + λI)⁻¹X_ℓᵀ and recovers each W_ℓ by ridge regression.
pub fn gcca_fit(views: &[LayerActivations], r: usize, options: GccaOptions) -> Result<SharedSubspace> {
    let ops = ViewOperators::new(views, options)?;
    fit_with(&ops, views, r)
}

pub(crate) fn fit_with(ops: &ViewOperators, views: &[LayerActivations], r: usize) -> Result<SharedSubspace> {
    let min_d = views.iter().map(|v| v.d()).min().unwrap_or(0);
    ensure!(r >= 1, "rank must be at least 1");
    ensure!(r <= ops.n.min(min_d), "rank {r} exceeds min(n, d) = {}", ops.n.min(min_d));
    let (spectrum, vecs) = sym_eigen(&ops.aggregate());
    ensure!(
        spectrum[0] > 1e-12,
        "singular aggregate operator (all views are zero)"
    );
    let g = vecs.columns(0, r).into_owned();
    let w = (0..ops.len()).map(|i| ops.weights(i, &g)).collect();
    Ok(SharedSubspace {
        layers: ops.layers.clone(),
        g,
        w,
        eigenvalues: spectrum[..r].to_vec(),
        spectrum,
        ridge: ops.options.ridge,
        scaling: ops.options.scaling,
        rank: r,
    })
}
