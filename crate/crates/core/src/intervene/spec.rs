use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::toymodel::{Corruption, ForwardTrace, HookedModel};

use super::effects::edit_residual;
use super::projector::Projector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Patch,
    Ablate,
    Isolate,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Description,
    Label,
    Query,
    None,
}

impl CorruptionKind {
    pub fn to_task(self) -> Option<Corruption> {
        match self {
            CorruptionKind::Description => Some(Corruption::Description),
            CorruptionKind::Label => Some(Corruption::Label),
            CorruptionKind::Query => Some(Corruption::Query),
            CorruptionKind::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferPayload {
    pub map_ref: String,
    pub q_a: String,
    pub q_b: String,
}

fn last() -> String {
    "last".to_string()
}

/// Declarative intervention, accepted as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    pub layers: Vec<usize>,
    pub projector_ref: String,
    pub corruption: CorruptionKind,
    #[serde(default = "last")]
    pub token_position: String,
    #[serde(default)]
    pub transfer: Option<TransferPayload>,
}

impl InterventionSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.layers.is_empty(), "intervention needs at least one layer");
        let unique: BTreeSet<_> = self.layers.iter().collect();
        ensure!(unique.len() == self.layers.len(), "duplicate layers in intervention");
        ensure!(self.token_position == "last", "token_position must be \"last\", got {:?}", self.token_position);
        match self.kind {
            InterventionKind::Transfer => {
                ensure!(self.transfer.is_some(), "transfer intervention requires a transfer payload");
                ensure!(self.layers.len() == 1, "transfer applies at exactly one layer");
            }
            _ => ensure!(self.transfer.is_none(), "transfer payload given for a {:?} intervention", self.kind),
        }
        if self.kind == InterventionKind::Patch {
            ensure!(self.corruption != CorruptionKind::None, "patch intervention requires a corruption condition");
        }
        Ok(())
    }

    pub fn validate_for<M: HookedModel + ?Sized>(&self, model: &M) -> Result<()> {
        self.validate()?;
        for &l in &self.layers {
            ensure!(l <= model.num_layers(), "layer {l} out of range 0..={}", model.num_layers());
        }
        Ok(())
    }
}

/// Auxiliary data an intervention needs beyond the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct InterventionInputs<'a> {
    /// One projector per targeted layer (patch, ablate, isolate).
    pub projectors: &'a [Projector],
    /// Clean-run trace supplying h_clean (patch).
    pub clean: Option<&'a ForwardTrace>,
    /// Residual offset to add (transfer).
    pub offset: Option<&'a [f64]>,
}

/// Forward pass of `tokens` with the substitutions described by `spec`.
pub fn forward_with_intervention<M: HookedModel + ?Sized>(
    model: &M,
    tokens: &[u32],
    spec: &InterventionSpec,
    inputs: &InterventionInputs<'_>,
) -> Result<ForwardTrace> {
    spec.validate_for(model)?;
    let d = model.dim();
    let mut sites: Vec<(usize, Option<&Projector>)> = Vec::new();
    for &l in &spec.layers {
        if spec.kind == InterventionKind::Transfer {
            sites.push((l, None));
            continue;
        }
        let p = inputs
            .projectors
            .iter()
            .find(|p| p.layer == l)
            .ok_or_else(|| Error::validation(format!("site mismatch: no projector for layer {l}")))?;
        ensure!(p.dim() == d, "projector dimension {} does not match model dimension {d}", p.dim());
        sites.push((l, Some(p)));
    }
    let clean = match spec.kind {
        InterventionKind::Patch => {
            Some(inputs.clean.ok_or_else(|| Error::validation("patch intervention requires the clean trace"))?)
        }
        _ => None,
    };
    let offset = match spec.kind {
        InterventionKind::Transfer => {
            let o = inputs.offset.ok_or_else(|| Error::validation("transfer intervention requires an offset"))?;
            ensure!(o.len() == d, "offset dimension {} does not match model dimension {d}", o.len());
            Some(o)
        }
        _ => None,
    };
    edit_residual(model, tokens, |layer, h| {
        let Some(&(_, proj)) = sites.iter().find(|(l, _)| *l == layer) else { return };
        match (spec.kind, proj) {
            (InterventionKind::Transfer, _) => {
                for (x, a) in h.iter_mut().zip(offset.unwrap_or(&[])) {
                    *x += a;
                }
            }
            (InterventionKind::Patch, Some(p)) => {
                let h_clean = &clean.expect("checked above").hidden[layer];
                let diff: Vec<f64> = h_clean.iter().zip(h.iter()).map(|(c, x)| c - x).collect();
                for (x, v) in h.iter_mut().zip(p.project(&diff)) {
                    *x += v;
                }
            }
            (InterventionKind::Ablate, Some(p)) => {
                let par = p.project(h);
                for (x, v) in h.iter_mut().zip(par) {
                    *x -= v;
                }
            }
            (InterventionKind::Isolate, Some(p)) => {
                let par = p.project(h);
                h.copy_from_slice(&par);
            }
            _ => {}
        }
    })
}
