use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::headlab::{
    fwer_sign_flip, head_subspace_metrics, reference_layer, span_attribution, HeadEffectMatrix, HeadId,
    HeadPatchPair, HeadSubspaceMetrics, SpanAttribution,
};
use crate::intervene::{
    ablate, isolate, random_subspace, transfer_patch, EffectReport, EffectSeries, Metric, PatchPair, Projector,
    TransferMap, TransferProbe,
};
use crate::linalg::Mat;
use crate::provenance::Provenance;
use crate::rng::labelled;
use crate::toymodel::{Corruption, HookedModel, Task};

use super::{child_seed, concept_id, CapturedRun, ExperimentConfig, PreparedRun};

/// Per-run, per-layer (query id, value) lists for the fitted and the random
/// subspace.
type Collected = BTreeMap<usize, [Vec<Vec<(String, f64)>>; 2]>;

fn items(run: &CapturedRun, stride: usize) -> Vec<usize> {
    (0..run.n()).step_by(stride).collect()
}

fn provenance(cfg: &ExperimentConfig, runs: &[PreparedRun], what: &str) -> Result<Provenance> {
    Ok(Provenance::new(&serde_json::json!({ "experiment": what, "config": cfg }))?
        .with_seed("experiment", cfg.seed)
        .with_run_ids(runs.iter().map(|r| r.run_id.clone())))
}

fn reports(
    metric: Metric,
    condition: &str,
    collected: Collected,
    excluded: usize,
    cfg: &ExperimentConfig,
    prov: Provenance,
) -> Result<EffectReport> {
    let mut series = [Vec::new(), Vec::new()];
    for (layer, per_kind) in collected {
        for (kind, values) in per_kind.into_iter().enumerate() {
            let seed = child_seed(cfg.seed, "bootstrap", layer as u64);
            series[kind].push(EffectSeries::new(layer, None, condition, values, excluded, cfg.resamples, cfg.level, seed)?);
        }
    }
    let [fitted, random] = series;
    let baseline = EffectReport {
        metric,
        n_demos: cfg.n_demos,
        seed: cfg.seed,
        series: random,
        baseline: None,
        provenance: prov.clone(),
    };
    let report = EffectReport {
        metric,
        n_demos: cfg.n_demos,
        seed: cfg.seed,
        series: fitted,
        baseline: Some(Box::new(baseline)),
        provenance: prov,
    };
    report.validate()?;
    Ok(report)
}

fn random_like(p: &Projector, seed: u64) -> Result<Projector> {
    Ok(random_subspace(p.dim(), p.rank(), seed)?.with_layer(p.layer))
}

/// NormCIE of patching each GCCA layer's subspace, with an equal-rank random
/// subspace (fresh per item and layer) as baseline.
pub fn patch_experiment<M: HookedModel + ?Sized>(
    model: &M,
    task: &Task,
    runs: &[PreparedRun],
    cfg: &ExperimentConfig,
    condition: Corruption,
) -> Result<EffectReport> {
    ensure!(!runs.is_empty(), "no runs");
    let mut collected: Collected = BTreeMap::new();
    let mut excluded = 0;
    for (ri, run) in runs.iter().enumerate() {
        let per_item: Vec<Option<Vec<(usize, f64, f64)>>> = items(run, cfg.item_stride)
            .into_par_iter()
            .map(|i| {
                let prompt = run.prompt(i);
                let mut rng = labelled(cfg.seed, condition.name(), (ri * run.n() + i) as u64);
                let corrupt = task.corrupt(prompt, condition, &mut rng)?;
                let pair = PatchPair::new(model, &prompt.tokens(), &corrupt.tokens(), prompt.target)?;
                let mut out = Vec::new();
                for p in &run.projectors {
                    let rand = random_like(p, child_seed(cfg.seed, "patch-random", (ri * run.n() + i) as u64 ^ (p.layer as u64) << 40))?;
                    let (Some(a), Some(b)) = (pair.patch(model, p)?.norm_cie, pair.patch(model, &rand)?.norm_cie) else {
                        return Ok(None);
                    };
                    out.push((p.layer, a, b));
                }
                Ok(Some(out))
            })
            .collect::<Result<_>>()?;
        for (k, item) in items(run, cfg.item_stride).into_iter().zip(per_item) {
            let Some(values) = item else {
                excluded += 1;
                continue;
            };
            for (layer, a, b) in values {
                let slot = collected.entry(layer).or_insert_with(|| [vec![Vec::new(); runs.len()], vec![Vec::new(); runs.len()]]);
                slot[0][ri].push((run.concept_ids[k].clone(), a));
                slot[1][ri].push((run.concept_ids[k].clone(), b));
            }
        }
    }
    let prov = provenance(cfg, runs, &format!("patch/{}", condition.name()))?;
    reports(Metric::NormCie, condition.name(), collected, excluded, cfg, prov)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Ablate,
    Isolate,
}

impl EditKind {
    pub fn name(self) -> &'static str {
        match self {
            EditKind::Ablate => "ablate",
            EditKind::Isolate => "isolate",
        }
    }
}

/// Log-prob change of the correct label when ablating or isolating each
/// GCCA layer's subspace on clean prompts, with a random baseline.
pub fn edit_experiment<M: HookedModel + ?Sized>(
    model: &M,
    runs: &[PreparedRun],
    cfg: &ExperimentConfig,
    kind: EditKind,
) -> Result<EffectReport> {
    ensure!(!runs.is_empty(), "no runs");
    let mut collected: Collected = BTreeMap::new();
    for (ri, run) in runs.iter().enumerate() {
        let per_item: Vec<Vec<(usize, f64, f64)>> = items(run, cfg.item_stride)
            .into_par_iter()
            .map(|i| {
                let prompt = run.prompt(i);
                let tokens = prompt.tokens();
                let mut out = Vec::new();
                for p in &run.projectors {
                    let rand = random_like(p, child_seed(cfg.seed, "edit-random", (ri * run.n() + i) as u64 ^ (p.layer as u64) << 40))?;
                    let f = match kind {
                        EditKind::Ablate => ablate::<M>,
                        EditKind::Isolate => isolate::<M>,
                    };
                    let a = f(model, &tokens, std::slice::from_ref(p), prompt.target)?.delta;
                    let b = f(model, &tokens, std::slice::from_ref(&rand), prompt.target)?.delta;
                    out.push((p.layer, a, b));
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for (k, values) in items(run, cfg.item_stride).into_iter().zip(per_item) {
            for (layer, a, b) in values {
                let slot = collected.entry(layer).or_insert_with(|| [vec![Vec::new(); runs.len()], vec![Vec::new(); runs.len()]]);
                slot[0][ri].push((run.concept_ids[k].clone(), a));
                slot[1][ri].push((run.concept_ids[k].clone(), b));
            }
        }
    }
    let prov = provenance(cfg, runs, kind.name())?;
    reports(Metric::LogprobDelta, "clean", collected, 0, cfg, prov)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    /// Cross-context CMA through fitted subspaces; baseline uses one random
    /// basis for both contexts.
    pub cross_context: EffectReport,
    /// Offsets taken in the target context itself with Q = I.
    pub same_context: EffectReport,
    /// (source run, target run) pairs used.
    pub run_pairs: Vec<(usize, usize)>,
}

fn centered_rows(x: &Mat, rows: &[usize]) -> Mat {
    let sub = Mat::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)]);
    let means = sub.row_mean();
    Mat::from_fn(sub.nrows(), sub.ncols(), |i, j| sub[(i, j)] - means[j])
}

fn leading(w: &Mat, r: usize) -> Mat {
    w.columns(0, r).into_owned()
}

/// Source run i transfers into the next run (cyclically) of a different
/// context.
fn run_pairs(runs: &[PreparedRun]) -> Vec<(usize, usize)> {
    let n = runs.len();
    (0..n)
        .filter_map(|i| {
            (1..n).map(|s| (i + s) % n).find(|&j| runs[j].run.context != runs[i].run.context).map(|j| (i, j))
        })
        .collect()
}

/// Cross-context offset transfer. Maps are fitted on the first `fit_frac`
/// of query concepts and evaluated on offset pairs from the rest.
pub fn transfer_experiment<M: HookedModel + ?Sized>(
    model: &M,
    task: &Task,
    runs: &[PreparedRun],
    cfg: &ExperimentConfig,
) -> Result<TransferOutcome> {
    let pairs = run_pairs(runs);
    ensure!(!pairs.is_empty(), "transfer needs runs in at least two contexts");
    let queries = &task.queries;
    let n_fit = ((queries.len() as f64 * cfg.fit_frac).round() as usize).clamp(1, queries.len() - 1);
    let fit_concepts: Vec<usize> = queries[..n_fit].to_vec();
    let fit_ids: Vec<String> = fit_concepts.iter().map(|&c| concept_id(c)).collect();
    // (layer) -> [cross gcca, cross random, same-context] per pair
    let mut collected: BTreeMap<usize, [Vec<Vec<(String, f64)>>; 3]> = BTreeMap::new();
    for (pi, &(si, ti)) in pairs.iter().enumerate() {
        let (src, tgt) = (&runs[si], &runs[ti]);
        ensure!(src.n() == tgt.n(), "transfer runs must share item order");
        let fit_rows: Vec<usize> =
            (0..src.n()).filter(|&i| fit_concepts.contains(&src.prompt(i).query_concept)).collect();
        let eval_rows: Vec<usize> =
            (0..src.n()).filter(|&i| !fit_concepts.contains(&src.prompt(i).query_concept)).collect();
        let mut rng = labelled(cfg.seed, "transfer-pairs", pi as u64);
        let mut offsets = Vec::with_capacity(cfg.transfer_pairs);
        while offsets.len() < cfg.transfer_pairs {
            let a = eval_rows[rng.gen_range(0..eval_rows.len())];
            let b = eval_rows[rng.gen_range(0..eval_rows.len())];
            if src.prompt(a).query_concept != src.prompt(b).query_concept {
                offsets.push((a, b));
            }
        }
        for ps in &src.projectors {
            let l = ps.layer;
            let pt = tgt.projector(l)?;
            let r = ps.rank().min(pt.rank());
            let (xs, xt) = (src.hidden(l), tgt.hidden(l));
            let (us, ut) = (leading(&ps.w, r), leading(&pt.w, r));
            let rb = random_subspace(model.dim(), r, child_seed(cfg.seed, "transfer-random", (pi as u64) << 32 | l as u64))?.w;
            let (cs, ct) = (centered_rows(&xs, &fit_rows), centered_rows(&xt, &fit_rows));
            let fit = |a: &Mat, b: &Mat| {
                TransferMap::fit(&src.run_id, &tgt.run_id, l, &(&cs * a), &(&ct * b), fit_ids.clone())
            };
            let map_g = fit(&us, &ut)?;
            let map_r = fit(&rb, &rb)?;
            let map_same = TransferMap { q: Mat::identity(r, r), source_context: tgt.run_id.clone(), ..map_g.clone() };
            let values: Vec<(String, [f64; 3])> = offsets
                .par_iter()
                .map(|&(a, b)| {
                    let (qa, qb) = (src.prompt(a).query_concept, src.prompt(b).query_concept);
                    let target_prompt = tgt.prompt(b);
                    ensure!(target_prompt.query_concept == qb, "item order differs between runs");
                    let tokens = target_prompt.tokens();
                    let (ida, idb) = (concept_id(qa), concept_id(qb));
                    let y_a = task.label(tgt.run.context, qa);
                    let (ha_s, hb_s): (Vec<f64>, Vec<f64>) = (xs.row(a).iter().copied().collect(), xs.row(b).iter().copied().collect());
                    let (ha_t, hb_t): (Vec<f64>, Vec<f64>) = (xt.row(a).iter().copied().collect(), xt.row(b).iter().copied().collect());
                    let cross = TransferProbe {
                        target_tokens: &tokens,
                        q_a: &ida,
                        q_b: &idb,
                        h_a: &ha_s,
                        h_b: &hb_s,
                        y_a,
                        y_b: target_prompt.target,
                    };
                    let within = TransferProbe { h_a: &ha_t, h_b: &hb_t, ..cross };
                    let g = transfer_patch(model, &map_g, &us, &ut, &cross)?;
                    let rnd = transfer_patch(model, &map_r, &rb, &rb, &cross)?;
                    let same = transfer_patch(model, &map_same, &ut, &ut, &within)?;
                    Ok((format!("{ida}>{idb}"), [g, rnd, same]))
                })
                .collect::<Result<_>>()?;
            let slot = collected
                .entry(l)
                .or_insert_with(|| std::array::from_fn(|_| vec![Vec::new(); pairs.len()]));
            for (id, v) in values {
                for k in 0..3 {
                    slot[k][pi].push((id.clone(), v[k]));
                }
            }
        }
    }
    let prov = provenance(cfg, runs, "transfer")?;
    let mut cross = BTreeMap::new();
    let mut same = BTreeMap::new();
    for (l, [g, r, s]) in collected {
        cross.insert(l, [g, r]);
        same.insert(l, [s, Vec::new()]);
    }
    let cross_context = reports(Metric::Cma, "cross_context", cross, 0, cfg, prov.clone())?;
    let mut same_series = Vec::new();
    for (l, [s, _]) in same {
        let seed = child_seed(cfg.seed, "bootstrap", l as u64);
        same_series.push(EffectSeries::new(l, None, "same_context", s, 0, cfg.resamples, cfg.level, seed)?);
    }
    let same_context = EffectReport {
        metric: Metric::Cma,
        n_demos: cfg.n_demos,
        seed: cfg.seed,
        series: same_series,
        baseline: cross_context.baseline.clone(),
        provenance: prov,
    };
    Ok(TransferOutcome { cross_context, same_context, run_pairs: pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCieOutcome {
    pub matrix: HeadEffectMatrix,
    pub report: EffectReport,
}

/// Per-head patching CIE under one corruption, pooled over the runs' items,
/// with the family-wise sign-flip test.
pub fn head_cie_experiment<M: HookedModel + ?Sized>(
    model: &M,
    task: &Task,
    runs: &[PreparedRun],
    cfg: &ExperimentConfig,
    condition: Corruption,
    n_perm: usize,
    alpha: f64,
) -> Result<HeadCieOutcome> {
    ensure!(!runs.is_empty(), "no runs");
    let heads = HeadId::all(model);
    let (l, k) = (model.num_layers(), model.num_heads());
    let mut per_query = Vec::new();
    let mut values: BTreeMap<HeadId, Vec<Vec<(String, f64)>>> =
        heads.iter().map(|&h| (h, vec![Vec::new(); runs.len()])).collect();
    for (ri, run) in runs.iter().enumerate() {
        let mats: Vec<(usize, Mat)> = items(run, cfg.item_stride)
            .into_par_iter()
            .map(|i| {
                let prompt = run.prompt(i);
                let mut rng = labelled(cfg.seed, condition.name(), (ri * run.n() + i) as u64);
                let corrupt = task.corrupt(prompt, condition, &mut rng)?;
                let pair = HeadPatchPair::new(model, &prompt.tokens(), &corrupt.tokens(), prompt.target)?;
                let mut m = Mat::zeros(l, k);
                for h in &heads {
                    m[(h.layer - 1, h.head)] = pair.cie(model, *h)?;
                }
                Ok((i, m))
            })
            .collect::<Result<_>>()?;
        for (i, m) in mats {
            for h in &heads {
                values.get_mut(h).unwrap()[ri].push((run.concept_ids[i].clone(), m[(h.layer - 1, h.head)]));
            }
            per_query.push(m);
        }
    }
    let matrix = fwer_sign_flip(&per_query, condition.name(), n_perm, alpha, child_seed(cfg.seed, "fwer", 0))?;
    let mut series = Vec::new();
    for (h, v) in values {
        let seed = child_seed(cfg.seed, "bootstrap-head", (h.layer * 1000 + h.head) as u64);
        series.push(EffectSeries::new(h.layer, Some(h.head), condition.name(), v, 0, cfg.resamples, cfg.level, seed)?);
    }
    let report = EffectReport {
        metric: Metric::Cie,
        n_demos: cfg.n_demos,
        seed: cfg.seed,
        series,
        baseline: None,
        provenance: provenance(cfg, runs, &format!("heads/{}", condition.name()))?,
    };
    Ok(HeadCieOutcome { matrix, report })
}

/// Attention mass by span class per head, averaged over a run's sampled items.
pub fn span_experiment<M: HookedModel + ?Sized>(
    model: &M,
    run: &CapturedRun,
    cfg: &ExperimentConfig,
) -> Result<Vec<SpanAttribution>> {
    let prompts: Vec<_> = items(run, cfg.item_stride)
        .into_iter()
        .map(|i| (run.prompt(i).tokens(), run.prompt(i).spans()))
        .collect();
    span_attribution(model, &prompts)
}

/// α and alignment of every head's centered outputs against the run's
/// shared subspace (heads below the first GCCA layer use that layer).
pub fn head_metrics_experiment<M: HookedModel + ?Sized>(model: &M, run: &PreparedRun) -> Result<Vec<HeadSubspaceMetrics>> {
    let available = &run.subspace.layers;
    HeadId::all(model)
        .into_iter()
        .map(|h| {
            let ref_layer = reference_layer(h.layer, available)?;
            let w = run.subspace.weights(ref_layer)?;
            let all: Vec<usize> = (0..run.n()).collect();
            let y = centered_rows(&run.hidden(ref_layer), &all) * w;
            let a = Mat::from_fn(run.n(), model.dim(), |i, j| run.traces[i].head(h.layer, h.head)[j]);
            let a = centered_rows(&a, &all);
            head_subspace_metrics(h, &a, ref_layer, w, &y)
        })
        .collect()
}
