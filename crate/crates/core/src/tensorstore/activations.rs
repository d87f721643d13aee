use crate::error::{ensure, Result};
use crate::linalg::{ensure_finite, Mat};

/// Last-token hidden states of one layer under one context: n rows (prompts)
/// by d columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub layer: usize,
    pub context_id: String,
    pub data: Mat,
    pub centered: bool,
    /// Row identifiers; when present, views combined in one analysis must agree.
    pub row_ids: Option<Vec<String>>,
}

impl LayerActivations {
    pub fn new(layer: usize, context_id: &str, data: Mat) -> Result<Self> {
        ensure_finite(&data, "activation matrix")?;
        Ok(LayerActivations { layer, context_id: context_id.to_string(), data, centered: false, row_ids: None })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn with_row_ids(mut self, ids: Vec<String>) -> Self {
        self.row_ids = Some(ids);
        self
    }

    /// Checks the centering invariant: |column mean| ≤ 1e-5·sd + 1e-8.
    pub fn is_numerically_centered(&self) -> bool {
        let n = self.n() as f64;
        self.data.column_iter().all(|c| {
            let m = c.sum() / n;
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            m.abs() <= 1e-5 * var.sqrt() + 1e-8
        })
    }
}

/// Subtracts column means. Requires n ≥ 2 and finite input.
pub fn center_columns(x: &LayerActivations) -> Result<LayerActivations> {
    let n = x.n();
    ensure!(n >= 2, "centering needs at least 2 rows, got {n}");
    ensure_finite(&x.data, "activation matrix")?;
    let mut data = x.data.clone();
    for mut col in data.column_iter_mut() {
        let m = col.sum() / n as f64;
        col.add_scalar_mut(-m);
    }
    Ok(LayerActivations { data, centered: true, ..x.clone() })
}
