//! Causal interventions on the residual stream at the final token position.

mod bootstrap;
mod effects;
mod projector;
mod report;
mod spec;
mod transfer;

pub use bootstrap::{
    aggregate_runs, bootstrap_ci, Summary, DEFAULT_LEVEL, DEFAULT_RESAMPLES, MIN_RESAMPLES,
};
pub use effects::{
    ablate, cie, edit_residual, isolate, norm_cie, patch_subspace, EditOutcome, PatchEffect, PatchPair,
    NORM_CIE_MIN_DENOMINATOR,
};
pub use projector::{decompose, random_subspace, Projector, ProjectorOrigin};
pub use report::{EffectReport, EffectRow, EffectSeries, Metric};
pub use spec::{forward_with_intervention, CorruptionKind, InterventionInputs, InterventionKind, InterventionSpec, TransferPayload};
pub use transfer::{fit_transfer_map, transfer_offset, transfer_patch, TransferMap, TransferProbe};
