mod common;

use common::*;
use conceptlens::intervene::{EffectReport, Metric, ProjectorOrigin};
use conceptlens::pipeline::*;
use conceptlens::toymodel::{Corruption, ToyModel};

fn config() -> ExperimentConfig {
    ExperimentConfig {
        n_runs: 2,
        n_demos: 2,
        per_concept: 2,
        seed: 3,
        layers: Some(vec![1, 2]),
        r_max: Some(3),
        rank_permutations: 100,
        item_stride: 2,
        transfer_pairs: 4,
        resamples: 1000,
        ..ExperimentConfig::default()
    }
}

fn setup() -> (ToyModel, conceptlens::toymodel::Task, Vec<PreparedRun>) {
    let (model, task) = (small_model(2, 11), small_task(11));
    let runs = prepare_runs(&model, &task, &config()).unwrap();
    (model, task, runs)
}

fn same_numbers(a: &EffectReport, b: &EffectReport) {
    assert_eq!(serde_json::to_string(a).unwrap(), serde_json::to_string(b).unwrap());
}

#[test]
fn prepared_runs_are_consistent() {
    let (model, task, runs) = setup();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs.iter().map(|r| r.run.context).collect::<Vec<_>>(), vec![0, 1]);
    for r in &runs {
        assert_eq!(r.n(), task.queries.len() * 2);
        assert_eq!(r.item_ids.len(), r.n());
        assert!((1..=3).contains(&r.subspace.rank));
        for p in &r.projectors {
            assert_eq!(p.origin, ProjectorOrigin::Gcca);
            assert_eq!(p.rank(), r.subspace.rank);
            assert_eq!(p.dim(), model.config.dim);
        }
    }
    let again = prepare_runs(&model, &task, &config()).unwrap();
    assert_eq!(runs[1].subspace.g, again[1].subspace.g);
    assert_eq!(runs[1].rank, again[1].rank);

    let mut r = runs[0].clone();
    assert!(r.restrict_to(&[3]).unwrap_err().to_string().contains("site mismatch"));
    r.restrict_to(&[2]).unwrap();
    assert_eq!(r.projectors.len(), 1);
}

#[test]
fn experiments_are_deterministic_and_well_formed() {
    let (model, task, runs) = setup();
    let cfg = config();
    let a = patch_experiment(&model, &task, &runs, &cfg, Corruption::Label).unwrap();
    let b = patch_experiment(&model, &task, &runs, &cfg, Corruption::Label).unwrap();
    same_numbers(&a, &b);
    assert_eq!(a.metric, Metric::NormCie);
    a.validate().unwrap();
    assert_eq!(a.series.len(), 2);
    let base = a.baseline.as_ref().unwrap();
    assert_eq!(base.series.len(), 2);
    assert!(a.series.iter().all(|s| s.condition == "label"));
    assert!(a.find(1, None, "label").is_some());

    let e = edit_experiment(&model, &runs, &cfg, EditKind::Ablate).unwrap();
    same_numbers(&e, &edit_experiment(&model, &runs, &cfg, EditKind::Ablate).unwrap());
    assert_eq!(e.metric, Metric::LogprobDelta);

    let t = transfer_experiment(&model, &task, &runs, &cfg).unwrap();
    let t2 = transfer_experiment(&model, &task, &runs, &cfg).unwrap();
    same_numbers(&t.cross_context, &t2.cross_context);
    same_numbers(&t.same_context, &t2.same_context);
    assert_eq!(t.run_pairs, vec![(0, 1), (1, 0)]);
    for s in &t.cross_context.series {
        assert!(s.values.iter().all(|run| run.len() == cfg.transfer_pairs));
    }

    let h = head_cie_experiment(&model, &task, &runs, &cfg, Corruption::Query, 1000, 0.05).unwrap();
    assert_eq!(h.matrix.cie.len(), 2);
    assert_eq!(h.matrix.cie[0].len(), 2);
    assert_eq!(h, head_cie_experiment(&model, &task, &runs, &cfg, Corruption::Query, 1000, 0.05).unwrap());

    let spans = span_experiment(&model, &runs[0], &cfg).unwrap();
    assert_eq!(spans.len(), 4);
    let metrics = head_metrics_experiment(&model, &runs[0]).unwrap();
    assert_eq!(metrics.len(), 4);
    assert!(metrics.iter().all(|m| m.alpha >= 0.0 && m.align.map_or(true, |v| v.abs() <= 1.0)));
}

#[test]
fn transfer_needs_two_contexts() {
    let (model, task) = (small_model(2, 11), small_task(11));
    let cfg = ExperimentConfig { n_runs: 1, ..config() };
    let runs = prepare_runs(&model, &task, &cfg).unwrap();
    assert!(transfer_experiment(&model, &task, &runs, &cfg).is_err());
}

#[test]
fn config_rejects_unknown_fields_and_bad_values() {
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"n_runs": 2, "typo": 1}"#).is_err());
    let cfg: ExperimentConfig = serde_json::from_str(r#"{"n_runs": 2}"#).unwrap();
    assert_eq!(cfg.n_demos, ExperimentConfig::default().n_demos);
    assert!(ExperimentConfig { fit_frac: 1.0, ..ExperimentConfig::default() }.validate().is_err());
    assert!(ExperimentConfig { n_runs: 0, ..ExperimentConfig::default() }.validate().is_err());
    assert_eq!(default_gcca_layers(8), vec![6, 7, 8]);
    assert_eq!(default_gcca_layers(1), vec![1]);
    assert_eq!(concept_id(7), "c07");
}
