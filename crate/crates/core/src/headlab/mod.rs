//! Head-level causal screening and head/subspace interaction metrics.
//!
//! Head indices are 0-based within a layer; layers are 1-based blocks.

mod attention;
mod fwer;
mod metrics;
mod patching;

pub use attention::{attention_mass_by_span, span_attribution, span_mass, SpanAttribution};
pub use fwer::{fwer_sign_flip, HeadEffectMatrix, DEFAULT_FWER_ALPHA, DEFAULT_FWER_PERMUTATIONS, MIN_FWER_PERMUTATIONS};
pub use metrics::{
    head_subspace_alignment, head_subspace_contribution, head_subspace_metrics, reference_layer, HeadSubspaceMetrics,
};
pub use patching::{full_component_patch, head_patch_cie, HeadPatchPair};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::toymodel::HookedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        HeadId { layer, head }
    }

    pub fn validate<M: HookedModel + ?Sized>(&self, model: &M) -> Result<()> {
        ensure!(
            (1..=model.num_layers()).contains(&self.layer),
            "head layer {} out of range 1..={}",
            self.layer,
            model.num_layers()
        );
        ensure!(self.head < model.num_heads(), "head {} out of range 0..{}", self.head, model.num_heads());
        Ok(())
    }

    /// Every head of `model`, layer-major.
    pub fn all<M: HookedModel + ?Sized>(model: &M) -> Vec<HeadId> {
        (1..=model.num_layers()).flat_map(|l| (0..model.num_heads()).map(move |k| HeadId::new(l, k))).collect()
    }
}
