use crate::error::{ensure, Result};
use crate::toymodel::{ForwardHook, ForwardTrace, HookedModel};

use super::HeadId;

/// Replaces selected head outputs and MLP outputs at the final position.
struct ComponentPatch<'a> {
    clean: &'a ForwardTrace,
    heads: &'a [HeadId],
    mlp: bool,
}

impl ForwardHook<f64> for ComponentPatch<'_> {
    fn heads(&mut self, layer: usize, heads: &mut [Vec<f64>]) {
        for id in self.heads.iter().filter(|id| id.layer == layer) {
            heads[id.head].copy_from_slice(self.clean.head(layer, id.head));
        }
    }

    fn mlp(&mut self, layer: usize, out: &mut [f64]) {
        if self.mlp {
            out.copy_from_slice(&self.clean.mlp[layer - 1]);
        }
    }
}

/// Clean and corrupt traces of a prompt pair for head scans.
#[derive(Debug, Clone)]
pub struct HeadPatchPair {
    pub corrupt_tokens: Vec<u32>,
    pub target: u32,
    pub clean: ForwardTrace,
    pub corrupt: ForwardTrace,
}

impl HeadPatchPair {
    pub fn new<M: HookedModel + ?Sized>(model: &M, clean: &[u32], corrupt: &[u32], target: u32) -> Result<Self> {
        ensure!((target as usize) < model.vocab(), "target token {target} outside vocabulary");
        Ok(HeadPatchPair {
            corrupt_tokens: corrupt.to_vec(),
            target,
            clean: model.trace(clean)?,
            corrupt: model.trace(corrupt)?,
        })
    }

    /// CIE of substituting the clean output of `head` into the corrupt run.
    pub fn cie<M: HookedModel + ?Sized>(&self, model: &M, head: HeadId) -> Result<f64> {
        head.validate(model)?;
        let mut hook = ComponentPatch { clean: &self.clean, heads: std::slice::from_ref(&head), mlp: false };
        let t = model.run(&self.corrupt_tokens, &mut hook, false)?;
        let y = self.target as usize;
        Ok(t.log_probs[y] - self.corrupt.log_probs[y])
    }
}

pub fn head_patch_cie<M: HookedModel + ?Sized>(
    model: &M,
    clean: &[u32],
    corrupt: &[u32],
    head: HeadId,
    target: u32,
) -> Result<f64> {
    HeadPatchPair::new(model, clean, corrupt, target)?.cie(model, head)
}

/// Corrupt run with every head and MLP output replaced by the clean run's.
/// When both prompts end in the same token at the same position the final
/// residual, and hence the logits, equal the clean run's.
pub fn full_component_patch<M: HookedModel + ?Sized>(model: &M, clean: &[u32], corrupt: &[u32]) -> Result<ForwardTrace> {
    let clean_trace = model.trace(clean)?;
    let heads = HeadId::all(model);
    let mut hook = ComponentPatch { clean: &clean_trace, heads: &heads, mlp: true };
    model.run(corrupt, &mut hook, false)
}
