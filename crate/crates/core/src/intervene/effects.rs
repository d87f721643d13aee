use std::collections::BTreeSet;

use crate::error::{ensure, Result};
use crate::toymodel::{ForwardHook, ForwardTrace, HookedModel};

use super::projector::Projector;

/// Pairs whose clean/corrupt log-prob gap is below this are excluded from
/// normalised CIE averages.
pub const NORM_CIE_MIN_DENOMINATOR: f64 = 1e-9;

struct ResidualFn<F>(F);

impl<F: FnMut(usize, &mut [f64])> ForwardHook<f64> for ResidualFn<F> {
    fn residual(&mut self, layer: usize, h: &mut [f64]) {
        (self.0)(layer, h)
    }
}

/// Runs `tokens` with `edit(layer, h)` applied to the final-position
/// residual after the embedding (layer 0) and after every block.
pub fn edit_residual<M, F>(model: &M, tokens: &[u32], edit: F) -> Result<ForwardTrace>
where
    M: HookedModel + ?Sized,
    F: FnMut(usize, &mut [f64]),
{
    model.run(tokens, &mut ResidualFn(edit), false)
}

fn check_projector<M: HookedModel + ?Sized>(model: &M, proj: &Projector) -> Result<()> {
    ensure!(proj.layer <= model.num_layers(), "layer {} out of range 0..={}", proj.layer, model.num_layers());
    ensure!(
        proj.dim() == model.dim(),
        "projector dimension {} does not match model dimension {}",
        proj.dim(),
        model.dim()
    );
    Ok(())
}

fn check_target<M: HookedModel + ?Sized>(model: &M, target: u32) -> Result<()> {
    ensure!((target as usize) < model.vocab(), "target token {target} outside vocabulary");
    Ok(())
}

/// ‖h_par + h_perp − h‖∞ for the decomposition of `h` under `proj`.
fn split_error(h: &[f64], par: &[f64], perp: &[f64]) -> f64 {
    h.iter().zip(par.iter().zip(perp)).map(|(x, (a, b))| (a + b - x).abs()).fold(0.0, f64::max)
}

/// Forward pass on `corrupt` with the final-position residual at
/// `proj.layer` replaced by h_corr + P(h_clean − h_corr).
pub fn patch_subspace<M: HookedModel + ?Sized>(
    model: &M,
    clean: &[u32],
    corrupt: &[u32],
    proj: &Projector,
) -> Result<ForwardTrace> {
    check_projector(model, proj)?;
    let h_clean = model.trace(clean)?.hidden[proj.layer].clone();
    patched_run(model, corrupt, &h_clean, proj).map(|(t, _)| t)
}

fn patched_run<M: HookedModel + ?Sized>(
    model: &M,
    corrupt: &[u32],
    h_clean: &[f64],
    proj: &Projector,
) -> Result<(ForwardTrace, f64)> {
    let mut site_error = 0.0;
    let mut failure = None;
    let trace = edit_residual(model, corrupt, |layer, h| {
        if layer != proj.layer {
            return;
        }
        match proj.decompose(h) {
            Ok((par, perp)) => site_error = split_error(h, &par, &perp),
            Err(e) => failure = Some(e),
        }
        let diff: Vec<f64> = h_clean.iter().zip(h.iter()).map(|(c, x)| c - x).collect();
        for (x, p) in h.iter_mut().zip(proj.project(&diff)) {
            *x += p;
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok((trace, site_error)),
    }
}

/// Causal indirect effect log p(y | patched) − log p(y | corrupt).
pub fn cie<M: HookedModel + ?Sized>(
    model: &M,
    clean: &[u32],
    corrupt: &[u32],
    proj: &Projector,
    target: u32,
) -> Result<f64> {
    Ok(PatchPair::new(model, clean, corrupt, target)?.patch(model, proj)?.cie)
}

/// CIE divided by the clean/corrupt gap; `None` when the gap is below
/// [`NORM_CIE_MIN_DENOMINATOR`] in magnitude.
pub fn norm_cie<M: HookedModel + ?Sized>(
    model: &M,
    clean: &[u32],
    corrupt: &[u32],
    proj: &Projector,
    target: u32,
) -> Result<Option<f64>> {
    Ok(PatchPair::new(model, clean, corrupt, target)?.patch(model, proj)?.norm_cie)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchEffect {
    pub cie: f64,
    pub norm_cie: Option<f64>,
    /// Decomposition residual at the patched site.
    pub site_error: f64,
}

/// Clean and corrupt traces of one prompt pair, cached so that many
/// projectors and layers can be patched without recomputing them.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub corrupt_tokens: Vec<u32>,
    pub target: u32,
    pub clean: ForwardTrace,
    pub corrupt: ForwardTrace,
}

impl PatchPair {
    pub fn new<M: HookedModel + ?Sized>(model: &M, clean: &[u32], corrupt: &[u32], target: u32) -> Result<Self> {
        check_target(model, target)?;
        Ok(PatchPair {
            corrupt_tokens: corrupt.to_vec(),
            target,
            clean: model.trace(clean)?,
            corrupt: model.trace(corrupt)?,
        })
    }

    /// log p(y | clean) − log p(y | corrupt).
    pub fn denominator(&self) -> f64 {
        let y = self.target as usize;
        self.clean.log_probs[y] - self.corrupt.log_probs[y]
    }

    pub fn patch<M: HookedModel + ?Sized>(&self, model: &M, proj: &Projector) -> Result<PatchEffect> {
        check_projector(model, proj)?;
        let (trace, site_error) = patched_run(model, &self.corrupt_tokens, &self.clean.hidden[proj.layer], proj)?;
        let y = self.target as usize;
        let cie = trace.log_probs[y] - self.corrupt.log_probs[y];
        let den = self.denominator();
        let norm_cie = (den.abs() >= NORM_CIE_MIN_DENOMINATOR).then(|| cie / den);
        Ok(PatchEffect { cie, norm_cie, site_error })
    }
}

/// Result of an ablation or isolation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditOutcome {
    pub baseline_log_prob: f64,
    pub log_prob: f64,
    /// log_prob − baseline_log_prob.
    pub delta: f64,
    /// Largest ‖h_par + h_perp − h‖∞ over intervention sites, measured
    /// before modification.
    pub site_error: f64,
}

fn keep_component<M: HookedModel + ?Sized>(
    model: &M,
    tokens: &[u32],
    projectors: &[Projector],
    target: u32,
    keep_parallel: bool,
) -> Result<EditOutcome> {
    ensure!(!projectors.is_empty(), "empty layer set");
    check_target(model, target)?;
    let mut seen = BTreeSet::new();
    for p in projectors {
        check_projector(model, p)?;
        ensure!(seen.insert(p.layer), "duplicate layer {} in layer set", p.layer);
    }
    let baseline = model.trace(tokens)?;
    let mut site_error = 0.0f64;
    let mut failure = None;
    let trace = edit_residual(model, tokens, |layer, h| {
        let Some(p) = projectors.iter().find(|p| p.layer == layer) else { return };
        match p.decompose(h) {
            Ok((par, perp)) => {
                site_error = site_error.max(split_error(h, &par, &perp));
                h.copy_from_slice(if keep_parallel { &par } else { &perp });
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let y = target as usize;
    let (b, l) = (baseline.log_probs[y], trace.log_probs[y]);
    Ok(EditOutcome { baseline_log_prob: b, log_prob: l, delta: l - b, site_error })
}

/// Removes the subspace component (h ← h_perp) at every projector's layer.
pub fn ablate<M: HookedModel + ?Sized>(
    model: &M,
    tokens: &[u32],
    projectors: &[Projector],
    target: u32,
) -> Result<EditOutcome> {
    keep_component(model, tokens, projectors, target, false)
}

/// Keeps only the subspace component (h ← h_par) at every projector's layer.
pub fn isolate<M: HookedModel + ?Sized>(
    model: &M,
    tokens: &[u32],
    projectors: &[Projector],
    target: u32,
) -> Result<EditOutcome> {
    keep_component(model, tokens, projectors, target, true)
}
