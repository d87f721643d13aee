mod common;

use common::*;
use conceptlens::headlab::*;
use conceptlens::linalg::Mat;
use conceptlens::rng::rng;
use conceptlens::tensorstore::{PromptSpans, Span, SpanClass};
use conceptlens::toymodel::*;
use proptest::prelude::*;

#[test]
fn alpha_and_align_match_brute_force() {
    for seed in 0..120u64 {
        let n = 3 + (seed as usize * 11) % 60;
        let d = 2 + (seed as usize * 5) % 30;
        let r = 1 + (seed as usize) % d;
        let a = gaussian(n, d, 3 * seed);
        let w = gaussian(d, r, 3 * seed + 1);
        let y = gaussian(n, r, 3 * seed + 2);
        let (alpha, align) = naive_alpha_align(&a, &w, &y);
        assert!((head_subspace_contribution(&a, &w, &y).unwrap() - alpha).abs() < 1e-10 * alpha.max(1.0));
        assert!((head_subspace_alignment(&a, &w, &y).unwrap() - align).abs() < 1e-10);
    }
}

#[test]
fn metric_edge_cases() {
    let w = Mat::identity(4, 4).columns(0, 2).into_owned();
    let mut a = gaussian(6, 4, 1);
    a.columns_mut(0, 2).fill(0.0);
    let y = gaussian(6, 2, 2);
    assert!(head_subspace_contribution(&a, &w, &y).unwrap().abs() < 1e-10);
    let m = head_subspace_metrics(HeadId::new(1, 0), &a, 1, &w, &y).unwrap();
    assert_eq!(m.align, None);
    assert!(head_subspace_contribution(&a, &w, &Mat::zeros(6, 2)).is_err());
    assert!(head_subspace_contribution(&a, &w, &gaussian(5, 2, 0)).is_err());
    // a head that writes exactly Y has α = 1 and align = 1
    let y = &gaussian(6, 4, 3) * &w;
    let a = &y * w.transpose();
    assert!((head_subspace_contribution(&a, &w, &y).unwrap() - 1.0).abs() < 1e-12);
    assert!((head_subspace_alignment(&a, &w, &y).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn reference_layer_falls_back_to_first_basis() {
    let avail = [6, 7, 8];
    assert_eq!(reference_layer(2, &avail).unwrap(), 6);
    assert_eq!(reference_layer(7, &avail).unwrap(), 7);
    assert!(reference_layer(9, &avail).is_err());
    assert!(reference_layer(1, &[]).is_err());
}

#[test]
fn head_ids_are_checked() {
    let model = small_model(2, 0);
    assert_eq!(HeadId::all(&model).len(), 4);
    assert_eq!(HeadId::all(&model)[2], HeadId::new(2, 0));
    assert!(HeadId::new(0, 0).validate(&model).is_err());
    assert!(HeadId::new(1, 2).validate(&model).is_err());
    HeadId::new(2, 1).validate(&model).unwrap();
}

fn label_pair(task: &Task, seed: u64) -> (Prompt, Prompt) {
    let (prompts, _) = task.generate(seed, 3, 1).unwrap();
    let corrupt = task.corrupt(&prompts[0], Corruption::Label, &mut rng(seed)).unwrap();
    (prompts[0].clone(), corrupt)
}

#[test]
fn component_substitution_reproduces_clean_run() {
    let (model, task) = (small_model(3, 6), small_task(6));
    for seed in 0..4u64 {
        let (clean, corrupt) = label_pair(&task, seed);
        let patched = full_component_patch(&model, &clean.tokens(), &corrupt.tokens()).unwrap();
        let want = model.trace(&clean.tokens()).unwrap();
        for (a, b) in patched.logits.iter().zip(&want.logits) {
            assert!((a - b).abs() < 1e-5);
        }
        let pair = HeadPatchPair::new(&model, &clean.tokens(), &clean.tokens(), clean.target).unwrap();
        assert_eq!(pair.cie(&model, HeadId::new(2, 1)).unwrap(), 0.0);
        let pair = HeadPatchPair::new(&model, &clean.tokens(), &corrupt.tokens(), clean.target).unwrap();
        let direct = head_patch_cie(&model, &clean.tokens(), &corrupt.tokens(), HeadId::new(1, 0), clean.target).unwrap();
        assert_eq!(pair.cie(&model, HeadId::new(1, 0)).unwrap(), direct);
    }
}

#[test]
fn attention_mass_partitions_each_row() {
    let (model, task) = (small_model(2, 1), small_task(1));
    let (prompts, spans) = task.generate(3, 3, 4).unwrap();
    let inputs: Vec<(Vec<u32>, PromptSpans)> = prompts.iter().map(|p| p.tokens()).zip(spans).collect();
    let attr = span_attribution(&model, &inputs).unwrap();
    assert_eq!(attr.len(), 4);
    for a in &attr {
        assert!((a.total() - 1.0).abs() < 1e-9);
        assert!(a.mass.iter().all(|&m| m >= 0.0));
        assert!(a.of(SpanClass::FinalDelimiter) > 0.0);
    }
    let single = attention_mass_by_span(&model, &inputs[0].0, &inputs[0].1, HeadId::new(1, 1)).unwrap();
    assert!((single.total() - 1.0).abs() < 1e-9);
    let mut wrong = inputs[0].1.clone();
    wrong.prompt_len += 1;
    assert!(attention_mass_by_span(&model, &inputs[0].0, &wrong, HeadId::new(1, 1)).is_err());
}

fn null_queries(n: usize, l: usize, k: usize, seed: u64) -> Vec<Mat> {
    (0..n).map(|q| gaussian(l, k, seed * 1000 + q as u64)).collect()
}

#[test]
fn fwer_flags_planted_head_and_respects_threshold() {
    let mut qs = null_queries(30, 4, 3, 1);
    for m in &mut qs {
        m[(2, 1)] += 3.0;
    }
    let h = fwer_sign_flip(&qs, "label", 1000, 0.05, 7).unwrap();
    assert_eq!(h.flagged(), vec![(3, 1)]);
    assert!(h.threshold >= 0.0);
    for (l, row) in h.cie.iter().enumerate() {
        for (k, &c) in row.iter().enumerate() {
            assert_eq!(h.significant[l][k], c > h.threshold);
        }
    }
    assert_eq!(h, fwer_sign_flip(&qs, "label", 1000, 0.05, 7).unwrap());
    assert!(fwer_sign_flip(&qs, "label", 999, 0.05, 7).is_err());
    assert!(fwer_sign_flip(&[], "label", 1000, 0.05, 7).is_err());
    qs[3][(0, 0)] = f64::NAN;
    assert!(fwer_sign_flip(&qs, "label", 1000, 0.05, 7).is_err());
}

#[test]
fn fwer_null_rarely_flags() {
    let hits = (0..60u64).filter(|&s| !fwer_sign_flip(&null_queries(20, 3, 3, 500 + s), "x", 1000, 0.05, s).unwrap().flagged().is_empty()).count();
    assert!(hits <= 8, "{hits}/60 null matrices flagged");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn raising_a_flagged_head_keeps_it_flagged(seed in 0u64..500, l in 0usize..3, k in 0usize..3, delta in 0.01f64..5.0) {
        let mut qs = null_queries(15, 3, 3, seed);
        for m in &mut qs {
            m[(l, k)] += 1.5;
        }
        let before = fwer_sign_flip(&qs, "x", 1000, 0.05, seed).unwrap();
        for m in &mut qs {
            m[(l, k)] += delta;
        }
        let after = fwer_sign_flip(&qs, "x", 1000, 0.05, seed).unwrap();
        if before.significant[l][k] {
            prop_assert!(after.significant[l][k]);
        }
    }

    #[test]
    fn span_masses_sum_to_row_total(weights in prop::collection::vec(0.0f64..1.0, 12), cuts in prop::collection::btree_set(1usize..12, 5)) {
        let total: f64 = weights.iter().sum();
        let row: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let c: Vec<usize> = cuts.into_iter().collect();
        let spans: Vec<Span> = SpanClass::ALL
            .iter()
            .zip(c.windows(2))
            .map(|(&class, w)| Span { class, start: w[0], end: w[1] })
            .collect();
        let ps = PromptSpans { prompt_len: 12, spans };
        let (mass, other) = span_mass(&row, &ps).unwrap();
        prop_assert!((mass.iter().sum::<f64>() + other - 1.0).abs() < 1e-12);
        for s in &ps.spans {
            let want: f64 = row[s.start..s.end].iter().sum();
            prop_assert!((mass[s.class.index()] - want).abs() < 1e-12);
        }
    }
}
