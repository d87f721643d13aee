//! End-to-end toy experiments: sample runs, capture activations, fit the
//! shared subspace, and measure interventions against random baselines.

mod experiments;
mod export;

pub use experiments::{
    edit_experiment, head_cie_experiment, head_metrics_experiment, patch_experiment, span_experiment,
    transfer_experiment, EditKind, HeadCieOutcome, TransferOutcome,
};
pub use export::{export_run, import_views};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::intervene::{Projector, ProjectorOrigin, DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use crate::linalg::Mat;
use crate::rng::{labelled, substream_seed};
use crate::subspace::{
    gcca_fit, gcca_rank_select, GccaOptions, RankSelection, SharedSubspace, ViewScaling, DEFAULT_ALPHA, DEFAULT_RIDGE,
};
use crate::tensorstore::{center_columns, LayerActivations};
use crate::toymodel::{ForwardTrace, HookedModel, Prompt, Run, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_runs: usize,
    pub n_demos: usize,
    /// Query descriptions sampled per held-out concept.
    pub per_concept: usize,
    pub seed: u64,
    /// Layers entering GCCA; defaults to the last third of the model.
    pub layers: Option<Vec<usize>>,
    pub ridge: f64,
    pub scaling: ViewScaling,
    /// Defaults to d/4.
    pub r_max: Option<usize>,
    pub rank_permutations: usize,
    pub rank_alpha: f64,
    /// Interventions use every `item_stride`-th item of a run.
    pub item_stride: usize,
    /// Offset pairs per run pair and layer in the transfer experiment.
    pub transfer_pairs: usize,
    /// Fraction of query concepts used to fit transfer maps.
    pub fit_frac: f64,
    pub resamples: usize,
    pub level: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_runs: 5,
            n_demos: 8,
            per_concept: 8,
            seed: 0,
            layers: None,
            ridge: DEFAULT_RIDGE,
            scaling: ViewScaling::UnitRms,
            r_max: None,
            rank_permutations: 200,
            rank_alpha: DEFAULT_ALPHA,
            item_stride: 8,
            transfer_pairs: 20,
            fit_frac: 0.5,
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_runs >= 1, "n_runs must be at least 1");
        ensure!(self.per_concept >= 1, "per_concept must be at least 1");
        ensure!(self.item_stride >= 1, "item_stride must be at least 1");
        ensure!(self.transfer_pairs >= 1, "transfer_pairs must be at least 1");
        ensure!(self.fit_frac > 0.0 && self.fit_frac < 1.0, "fit_frac must lie in (0, 1)");
        Ok(())
    }

    pub fn gcca_layers(&self, num_layers: usize) -> Vec<usize> {
        self.layers.clone().unwrap_or_else(|| default_gcca_layers(num_layers))
    }
}

/// The last ⌈L/3⌉ layers.
pub fn default_gcca_layers(num_layers: usize) -> Vec<usize> {
    let k = num_layers.div_ceil(3).max(1);
    (num_layers + 1 - k..=num_layers).collect()
}

pub fn concept_id(concept: usize) -> String {
    format!("c{concept:02}")
}

/// Deterministic child seed for a named sub-task.
pub(crate) fn child_seed(seed: u64, label: &str, index: u64) -> u64 {
    labelled(seed, label, index).next_u64()
}

/// A sampled run with its final-position traces.
#[derive(Debug, Clone)]
pub struct CapturedRun {
    pub run_id: String,
    pub run: Run,
    /// Unique per item ("cXX/sY").
    pub item_ids: Vec<String>,
    /// Query concept of each item ("cXX").
    pub concept_ids: Vec<String>,
    pub traces: Vec<ForwardTrace>,
}

impl CapturedRun {
    pub fn n(&self) -> usize {
        self.traces.len()
    }

    /// Final-position hidden states at `layer`, n×d.
    pub fn hidden(&self, layer: usize) -> Mat {
        let d = self.traces[0].hidden[layer].len();
        Mat::from_fn(self.n(), d, |i, j| self.traces[i].hidden[layer][j])
    }

    pub fn prompt(&self, item: usize) -> &Prompt {
        &self.run.prompts[item]
    }
}

/// A captured run with its fitted shared subspace.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub captured: CapturedRun,
    pub rank: RankSelection,
    pub subspace: SharedSubspace,
    /// Orthonormal bases of span(W_ℓ), one per GCCA layer.
    pub projectors: Vec<Projector>,
}

impl std::ops::Deref for PreparedRun {
    type Target = CapturedRun;

    fn deref(&self) -> &CapturedRun {
        &self.captured
    }
}

impl PreparedRun {
    pub fn projector(&self, layer: usize) -> Result<&Projector> {
        self.projectors
            .iter()
            .find(|p| p.layer == layer)
            .ok_or_else(|| crate::Error::validation(format!("no subspace for layer {layer}")))
    }

    /// Keeps only the projectors of `layers`, all of which must be fitted.
    pub fn restrict_to(&mut self, layers: &[usize]) -> Result<()> {
        for &l in layers {
            self.projector(l).map_err(|_| crate::Error::validation(format!("site mismatch: layer {l} has no fitted subspace")))?;
        }
        self.projectors.retain(|p| layers.contains(&p.layer));
        Ok(())
    }
}

pub fn trace_all<M: HookedModel + ?Sized>(model: &M, prompts: &[Prompt]) -> Result<Vec<ForwardTrace>> {
    prompts.par_iter().map(|p| model.trace(&p.tokens())).collect()
}

/// Centered views of the given layers with shared row ids.
pub fn centered_views(run_id: &str, ids: &[String], hidden: &[(usize, Mat)]) -> Result<Vec<LayerActivations>> {
    hidden
        .iter()
        .map(|(l, x)| center_columns(&LayerActivations::new(*l, run_id, x.clone())?.with_row_ids(ids.to_vec())))
        .collect()
}

/// Rank selection, GCCA fit at rank max(r̂, 1), and projector bases.
pub fn fit_shared_subspace(
    views: &[LayerActivations],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(RankSelection, SharedSubspace, Vec<Projector>)> {
    ensure!(!views.is_empty(), "no views");
    let (n, d) = (views[0].n(), views[0].d());
    let r_max = cfg.r_max.unwrap_or(d / 4).clamp(1, n.min(d));
    let options = GccaOptions { ridge: cfg.ridge, scaling: cfg.scaling };
    let rank = gcca_rank_select(views, r_max, cfg.rank_permutations, cfg.rank_alpha, seed, options)?;
    let subspace = gcca_fit(views, rank.r_hat.max(1), options)?;
    let projectors = subspace
        .layers
        .iter()
        .map(|&l| Projector::new(l, subspace.basis(l)?, ProjectorOrigin::Gcca))
        .collect::<Result<_>>()?;
    Ok((rank, subspace, projectors))
}

/// Samples `cfg.n_runs` runs (run i in context i mod C) and captures their
/// traces.
pub fn capture_runs<M: HookedModel + ?Sized>(model: &M, task: &Task, cfg: &ExperimentConfig) -> Result<Vec<CapturedRun>> {
    cfg.validate()?;
    (0..cfg.n_runs)
        .map(|i| {
            let run_seed = substream_seed(cfg.seed, i as u64);
            let run = task.sample_run_in(run_seed, i % task.config.contexts, cfg.n_demos, cfg.per_concept)?;
            let traces = trace_all(model, &run.prompts)?;
            Ok(CapturedRun {
                run_id: format!("run{i}"),
                item_ids: run.item_ids(),
                concept_ids: run.prompts.iter().map(|p| concept_id(p.query_concept)).collect(),
                traces,
                run,
            })
        })
        .collect()
}

/// Fits the shared subspace of a captured run over `cfg`'s GCCA layers.
pub fn prepare_run(captured: CapturedRun, cfg: &ExperimentConfig, num_layers: usize) -> Result<PreparedRun> {
    let layers = cfg.gcca_layers(num_layers);
    for &l in &layers {
        ensure!((1..=num_layers).contains(&l), "GCCA layer {l} out of range 1..={num_layers}");
    }
    let hidden: Vec<(usize, Mat)> = layers.iter().map(|&l| (l, captured.hidden(l))).collect();
    let views = centered_views(&captured.run_id, &captured.item_ids, &hidden)?;
    let (rank, subspace, projectors) = fit_shared_subspace(&views, cfg, child_seed(captured.run.seed, "rank", 0))?;
    Ok(PreparedRun { captured, rank, subspace, projectors })
}

pub fn prepare_runs<M: HookedModel + ?Sized>(model: &M, task: &Task, cfg: &ExperimentConfig) -> Result<Vec<PreparedRun>> {
    capture_runs(model, task, cfg)?.into_iter().map(|c| prepare_run(c, cfg, model.num_layers())).collect()
}
