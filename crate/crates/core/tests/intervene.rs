mod common;

use common::*;
use conceptlens::intervene::*;
use conceptlens::linalg::Mat;
use conceptlens::rng::rng;
use conceptlens::toymodel::*;
use proptest::prelude::*;
use rand::Rng as _;

/// Replaces the last-position residual at `layer` with h + P(h_clean − h),
/// P materialised as a dense d×d matrix.
struct DensePatch {
    layer: usize,
    p: Mat,
    clean: Vec<f64>,
}

impl ForwardHook<f64> for DensePatch {
    fn residual(&mut self, layer: usize, h: &mut [f64]) {
        if layer != self.layer {
            return;
        }
        let d = h.len();
        let diff: Vec<f64> = (0..d).map(|j| self.clean[j] - h[j]).collect();
        for i in 0..d {
            h[i] += (0..d).map(|j| self.p[(i, j)] * diff[j]).sum::<f64>();
        }
    }
}

fn label_pair(task: &Task, seed: u64) -> (Prompt, Prompt) {
    let (prompts, _) = task.generate(seed, 3, 1).unwrap();
    let corrupt = task.corrupt(&prompts[0], Corruption::Label, &mut rng(seed)).unwrap();
    (prompts[0].clone(), corrupt)
}

#[test]
fn cie_matches_dense_projector_oracle() {
    let (model, task) = (small_model(3, 5), small_task(5));
    for seed in 0..6u64 {
        let (clean, corrupt) = label_pair(&task, seed);
        let w = orthonormal(16, 4, 40 + seed);
        let proj = Projector::new(2, w.clone(), ProjectorOrigin::Random).unwrap();
        let got = cie(&model, &clean.tokens(), &corrupt.tokens(), &proj, clean.target).unwrap();

        let clean_h = model.trace(&clean.tokens()).unwrap().hidden[2].clone();
        let mut hook = DensePatch { layer: 2, p: &w * w.transpose(), clean: clean_h };
        let patched = model.run(&corrupt.tokens(), &mut hook, false).unwrap();
        let base = model.trace(&corrupt.tokens()).unwrap();
        let y = clean.target as usize;
        let want = patched.log_probs[y] - base.log_probs[y];
        assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn identical_runs_have_zero_effect() {
    let (model, task) = (small_model(2, 1), small_task(1));
    let (clean, _) = label_pair(&task, 0);
    let proj = Projector::new(1, orthonormal(16, 3, 2), ProjectorOrigin::Gcca).unwrap();
    let pair = PatchPair::new(&model, &clean.tokens(), &clean.tokens(), clean.target).unwrap();
    let e = pair.patch(&model, &proj).unwrap();
    assert_eq!(e.cie, 0.0);
    assert_eq!(e.norm_cie, None);
    assert!(e.site_error < 1e-12);
}

#[test]
fn full_projector_restores_single_layer_model() {
    let (model, task) = (small_model(1, 7), small_task(7));
    let mut checked = 0;
    for seed in 0..10u64 {
        let (clean, corrupt) = label_pair(&task, seed);
        let pair = PatchPair::new(&model, &clean.tokens(), &corrupt.tokens(), clean.target).unwrap();
        if pair.denominator().abs() < NORM_CIE_MIN_DENOMINATOR {
            continue;
        }
        let e = pair.patch(&model, &Projector::full(1, 16, ProjectorOrigin::Random)).unwrap();
        assert!((e.norm_cie.unwrap() - 1.0).abs() < 1e-6);
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn ablate_and_isolate_identities() {
    let (model, task) = (small_model(3, 2), small_task(2));
    let (p, _) = label_pair(&task, 4);
    let tokens = p.tokens();
    let base = model.trace(&tokens).unwrap();
    // a basis orthogonal to h at layer 2
    let h = Mat::from_column_slice(16, 1, &base.hidden[2]);
    let q = gram_schmidt(&Mat::from_fn(16, 5, |i, j| if j == 0 { h[(i, 0)] } else { gaussian(16, 5, 3)[(i, j)] }));
    let perp = Projector::new(2, q.columns(1, 4).into_owned(), ProjectorOrigin::Random).unwrap();
    let out = ablate(&model, &tokens, &[perp], p.target).unwrap();
    assert!(out.delta.abs() < 1e-6);
    assert!(out.site_error < 1e-12);

    let full = Projector::full(2, 16, ProjectorOrigin::Random);
    assert!(isolate(&model, &tokens, &[full.clone()], p.target).unwrap().delta.abs() < 1e-6);
    // with no final norm, ablating the whole last-layer state gives uniform logits
    let last = Projector::full(3, 16, ProjectorOrigin::Random);
    let gone = ablate(&model, &tokens, &[last], p.target).unwrap();
    assert!((gone.log_prob + (48f64).ln()).abs() < 1e-12);

    assert!(ablate(&model, &tokens, &[], p.target).is_err());
    assert!(ablate(&model, &tokens, &[full.clone(), full], p.target).unwrap_err().to_string().contains("duplicate"));
}

#[test]
fn projector_construction_checks() {
    assert!(Projector::new(1, Mat::zeros(4, 0), ProjectorOrigin::Gcca).is_err());
    assert!(Projector::new(1, Mat::from_element(4, 2, 1.0), ProjectorOrigin::Gcca).is_err());
    let p = Projector::from_span(1, &gaussian(6, 2, 1), ProjectorOrigin::Gcca).unwrap();
    assert_eq!((p.dim(), p.rank()), (6, 2));
    assert!(p.decompose(&[1.0; 5]).unwrap_err().to_string().contains("dimension mismatch"));
    let r = random_subspace(64, 8, 3).unwrap();
    assert_eq!(r, random_subspace(64, 8, 3).unwrap());
    assert_ne!(r.w, random_subspace(64, 8, 4).unwrap().w);
    assert!((r.w.transpose() * &r.w - Mat::identity(8, 8)).abs().max() < 1e-10);
    assert!(random_subspace(4, 5, 0).unwrap_err().to_string().contains("exceeds"));
}

#[test]
fn random_bases_have_expected_overlap() {
    let fixed = orthonormal(32, 4, 99);
    let mean: f64 = (0..200)
        .map(|s| naive_overlap(&fixed, &random_subspace(32, 4, s).unwrap().w))
        .sum::<f64>()
        / 200.0;
    assert!((mean - 4.0 / 32.0).abs() < 0.02, "{mean}");
}

#[test]
fn spec_parsing_and_validation() {
    let spec: InterventionSpec = serde_json::from_str(
        r#"{"kind":"patch","layers":[2],"projector_ref":"gcca:run0","corruption":"label"}"#,
    )
    .unwrap();
    assert_eq!(spec.token_position, "last");
    spec.validate().unwrap();
    assert!(serde_json::from_str::<InterventionSpec>(
        r#"{"kind":"patch","layers":[2],"projector_ref":"x","corruption":"label","extra":1}"#
    )
    .is_err());
    let bad = |f: &dyn Fn(&mut InterventionSpec)| {
        let mut s = spec.clone();
        f(&mut s);
        s.validate().is_err()
    };
    assert!(bad(&|s| s.layers.clear()));
    assert!(bad(&|s| s.layers = vec![2, 2]));
    assert!(bad(&|s| s.token_position = "first".into()));
    assert!(bad(&|s| s.corruption = CorruptionKind::None));
    assert!(bad(&|s| s.kind = InterventionKind::Transfer));
    assert!(bad(&|s| {
        s.kind = InterventionKind::Transfer;
        s.layers = vec![1, 2];
        s.transfer = Some(TransferPayload { map_ref: "m".into(), q_a: "a".into(), q_b: "b".into() });
    }));
    assert!(bad(&|s| s.transfer = Some(TransferPayload { map_ref: "m".into(), q_a: "a".into(), q_b: "b".into() })));
    let model = small_model(2, 0);
    let mut far = spec.clone();
    far.layers = vec![3];
    assert!(far.validate_for(&model).is_err());
}

#[test]
fn generic_forward_matches_dedicated_paths() {
    let (model, task) = (small_model(3, 3), small_task(3));
    let (clean, corrupt) = label_pair(&task, 2);
    let (ct, xt) = (clean.tokens(), corrupt.tokens());
    let proj = Projector::new(2, orthonormal(16, 5, 8), ProjectorOrigin::Gcca).unwrap();
    let clean_trace = model.trace(&ct).unwrap();
    let inputs = InterventionInputs { projectors: std::slice::from_ref(&proj), clean: Some(&clean_trace), offset: None };
    let mut spec = InterventionSpec {
        kind: InterventionKind::Patch,
        layers: vec![2],
        projector_ref: "p".into(),
        corruption: CorruptionKind::Label,
        token_position: "last".into(),
        transfer: None,
    };
    let generic = forward_with_intervention(&model, &xt, &spec, &inputs).unwrap();
    assert_eq!(generic, patch_subspace(&model, &ct, &xt, &proj).unwrap());

    // clean == corrupt reproduces the plain pass exactly
    assert_eq!(forward_with_intervention(&model, &ct, &spec, &inputs).unwrap(), clean_trace);

    spec.kind = InterventionKind::Ablate;
    spec.corruption = CorruptionKind::None;
    let a = forward_with_intervention(&model, &ct, &spec, &inputs).unwrap();
    let y = clean.target as usize;
    let direct = ablate(&model, &ct, &[proj.clone()], clean.target).unwrap();
    assert_eq!(a.log_probs[y], direct.log_prob);

    spec.layers = vec![1];
    assert!(forward_with_intervention(&model, &ct, &spec, &inputs).unwrap_err().to_string().contains("site mismatch"));
}

fn orthogonal(r: usize, seed: u64) -> Mat {
    gram_schmidt(&gaussian(r, r, seed))
}

#[test]
fn procrustes_beats_random_rotations() {
    for seed in 0..5u64 {
        let r = 4;
        let src = gaussian(30, r, seed);
        let tgt = &src * orthogonal(r, 100 + seed) + gaussian(30, r, 200 + seed) * 0.3;
        let q = fit_transfer_map(&src, &tgt).unwrap();
        assert!((q.transpose() * &q - Mat::identity(r, r)).abs().max() < 1e-10);
        let loss = |m: &Mat| (&src * m - &tgt).norm_squared();
        let best = loss(&q);
        for k in 0..1000u64 {
            assert!(best <= loss(&orthogonal(r, 10_000 * (seed + 1) + k)) + 1e-9);
        }
    }
    // exact recovery without noise
    let src = gaussian(20, 3, 1);
    let q0 = orthogonal(3, 2);
    assert!((fit_transfer_map(&src, &(&src * &q0)).unwrap() - q0).abs().max() < 1e-9);
    assert!(fit_transfer_map(&Mat::zeros(5, 2), &Mat::zeros(5, 2)).unwrap_err().to_string().contains("degenerate"));
    assert!(fit_transfer_map(&gaussian(2, 3, 0), &gaussian(2, 3, 1)).is_err());
}

#[test]
fn transfer_offset_is_mapped_difference() {
    let (ws, wt) = (orthonormal(8, 3, 1), orthonormal(8, 3, 2));
    let q = orthogonal(3, 3);
    let (ha, hb): (Vec<f64>, Vec<f64>) = ((0..8).map(|i| i as f64).collect(), (0..8).map(|i| 1.0 - i as f64).collect());
    let got = transfer_offset(&ws, &wt, &q, &ha, &hb).unwrap();
    let diff = Mat::from_fn(8, 1, |i, _| ha[i] - hb[i]);
    let want = &wt * &q * ws.transpose() * diff;
    for i in 0..8 {
        assert!((got[i] - want[(i, 0)]).abs() < 1e-12);
    }
}

#[test]
fn transfer_patch_refuses_fit_concepts() {
    let (model, task) = (small_model(2, 0), small_task(0));
    let (p, _) = label_pair(&task, 1);
    let (ws, wt) = (orthonormal(16, 2, 1), orthonormal(16, 2, 2));
    let map = TransferMap::fit("a", "b", 1, &gaussian(10, 2, 3), &gaussian(10, 2, 4), vec!["c01".into()]).unwrap();
    let tokens = p.tokens();
    let h = vec![0.1; 16];
    let probe = TransferProbe { target_tokens: &tokens, q_a: "c01", q_b: "c02", h_a: &h, h_b: &h, y_a: 3, y_b: 4 };
    assert!(transfer_patch(&model, &map, &ws, &wt, &probe).unwrap_err().to_string().contains("fit set"));
    let ok = TransferProbe { q_a: "c05", ..probe };
    // a zero offset leaves the pass untouched
    assert_eq!(transfer_patch(&model, &map, &ws, &wt, &ok).unwrap(), 0.0);
}

/// Percentile bootstrap written from the definition.
fn reference_bootstrap(x: &[f64], b: usize, level: f64, seed: u64) -> (f64, f64) {
    let mut g = rng(seed);
    let mut means: Vec<f64> = (0..b)
        .map(|_| (0..x.len()).map(|_| x[g.gen_range(0..x.len())]).sum::<f64>() / x.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (b - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        means[lo] + (means[hi] - means[lo]) * (pos - lo as f64)
    };
    let tail = (1.0 - level) / 2.0;
    (q(tail), q(1.0 - tail))
}

#[test]
fn bootstrap_matches_reference_and_covers() {
    for seed in 0..5u64 {
        let x: Vec<f64> = gaussian(15, 1, seed).iter().copied().collect();
        let (lo, hi) = bootstrap_ci(&x, 2000, 0.95, seed).unwrap();
        let (rl, rh) = reference_bootstrap(&x, 2000, 0.95, seed);
        assert!((lo - rl).abs() < 1e-12 && (hi - rh).abs() < 1e-12);
    }
    let covered = (0..200u64)
        .filter(|&s| {
            let x: Vec<f64> = gaussian(40, 1, 1000 + s).iter().copied().collect();
            let (lo, hi) = bootstrap_ci(&x, 1000, 0.95, s).unwrap();
            lo <= 0.0 && 0.0 <= hi
        })
        .count();
    assert!((176..=198).contains(&covered), "coverage {covered}/200");
}

#[test]
fn runs_are_weighted_equally() {
    let runs = vec![
        vec![("a".to_string(), 1.0), ("a".to_string(), 3.0), ("b".to_string(), 8.0)],
        vec![("a".to_string(), 0.0)],
    ];
    let s = aggregate_runs(&runs, 1000, 0.9, 0).unwrap();
    assert_eq!(s.run_means, vec![5.0, 0.0]);
    assert_eq!(s.mean, 2.5);
    assert_eq!(s.n_queries, 3);
    assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
}

proptest! {
    #[test]
    fn decomposition_is_exact(seed in 0u64..10_000, d in 2usize..24, frac in 0.0f64..1.0) {
        let r = 1 + ((d - 1) as f64 * frac) as usize;
        let p = Projector::new(0, orthonormal(d, r, seed), ProjectorOrigin::Random).unwrap();
        let h: Vec<f64> = gaussian(d, 1, seed + 1).iter().map(|v| v * 100.0).collect();
        let (par, perp) = p.decompose(&h).unwrap();
        for j in 0..d {
            prop_assert!((par[j] + perp[j] - h[j]).abs() <= 1e-12 * 100.0 * d as f64);
        }
        let dot: f64 = par.iter().zip(&perp).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() < 1e-8 * 1e4 * d as f64);
        // projecting twice changes nothing
        let again = p.project(&par);
        for j in 0..d {
            prop_assert!((again[j] - par[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn in_span_vectors_have_no_orthogonal_part(seed in 0u64..10_000, d in 2usize..20) {
        let w = orthonormal(d, 1 + seed as usize % d, seed);
        let coeff = gaussian(w.ncols(), 1, seed + 7);
        let h: Vec<f64> = (&w * coeff).iter().copied().collect();
        let (_, perp) = Projector::new(0, w, ProjectorOrigin::Gcca).unwrap().decompose(&h).unwrap();
        prop_assert!(perp.iter().all(|v| v.abs() < 1e-6));
    }
}
