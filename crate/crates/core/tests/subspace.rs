mod common;

use common::*;
use conceptlens::linalg::Mat;
use conceptlens::stats::spearman;
use conceptlens::subspace::*;
use conceptlens::tensorstore::{center_columns, LayerActivations};
use proptest::prelude::*;

fn view(layer: usize, x: Mat) -> LayerActivations {
    center_columns(&LayerActivations::new(layer, "ctx", x).unwrap()).unwrap()
}

fn plain(ridge: f64) -> GccaOptions {
    GccaOptions { ridge, scaling: ViewScaling::None }
}

#[test]
fn overlap_matches_brute_force() {
    for seed in 0..120u64 {
        let d = 2 + (seed as usize * 7) % 31;
        let k1 = 1 + (seed as usize) % d;
        let k2 = 1 + (seed as usize * 5) % d;
        let (u, v) = (orthonormal(d, k1, 2 * seed), orthonormal(d, k2, 2 * seed + 1));
        let got = principal_angle_overlap(&u, &v).unwrap();
        assert!((got - naive_overlap(&u, &v)).abs() < 1e-10, "seed {seed}");
    }
}

#[test]
fn overlap_edge_cases() {
    let u = orthonormal(10, 4, 1);
    assert!((principal_angle_overlap(&u, &u).unwrap() - 1.0).abs() < 1e-12);
    let e = Mat::identity(6, 6);
    let (a, b) = (e.columns(0, 3).into_owned(), e.columns(3, 3).into_owned());
    assert!(principal_angle_overlap(&a, &b).unwrap().abs() < 1e-12);
    let err = principal_angle_overlap(&(2.0 * &a), &b).unwrap_err();
    assert!(err.to_string().contains("orthonormal"));
    // context overlap orthonormalises arbitrary spanning sets first
    let mixed = &u * gaussian(4, 4, 9);
    assert!((context_subspace_overlap(&mixed, &u).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn rsa_and_spearman_match_brute_force() {
    for seed in 0..100u64 {
        let n = 4 + (seed as usize) % 30;
        let r = 2 + (seed as usize) % 8;
        let (ya, yb) = (gaussian(n, r, 3 * seed), gaussian(n, r, 3 * seed + 1));
        let (ra, rb) = (compute_rdm(&ya).unwrap(), compute_rdm(&yb).unwrap());
        let (ua, ub) = (naive_rdm_upper(&ya), naive_rdm_upper(&yb));
        for (x, y) in ra.upper_triangle().iter().zip(&ua) {
            assert!((x - y).abs() < 1e-10);
        }
        let want = naive_spearman(&ua, &ub);
        assert!((rsa(&ra, &rb).unwrap() - want).abs() < 1e-10, "seed {seed}");
    }
}

#[test]
fn spearman_handles_ties() {
    let a = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0];
    let b = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0];
    assert!((spearman(&a, &b).unwrap() - naive_spearman(&a, &b)).abs() < 1e-12);
}

#[test]
fn identical_views_recover_top_singular_subspace() {
    let x = gaussian(40, 10, 5);
    let v = view(1, x);
    let s = gcca_fit(&[v.clone(), LayerActivations { layer: 2, ..v.clone() }], 4, plain(1e-10)).unwrap();
    let svd = v.data.clone().svd(true, false);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.unwrap();
    let top = Mat::from_fn(40, 4, |i, j| u[(i, idx[j])]);
    assert!((principal_angle_overlap(&s.g, &top).unwrap() - 1.0).abs() < 1e-6);
    for l in &s.eigenvalues {
        assert!((l - 2.0).abs() < 1e-6, "eigenvalue {l}");
    }
}

#[test]
fn gcca_invariants() {
    let views: Vec<_> = (0..3).map(|l| view(l + 1, gaussian(30, 8, 100 + l as u64))).collect();
    let s = gcca_fit(&views, 5, plain(DEFAULT_RIDGE)).unwrap();
    let gtg = s.g.transpose() * &s.g;
    assert!((gtg - Mat::identity(5, 5)).abs().max() < 1e-6);
    assert!(s.spectrum.iter().all(|&l| l >= -1e-9 && l <= 3.0 + 1e-9));
    assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(s.w.len(), 3);
    assert_eq!(s.w[0].shape(), (8, 5));
    // W is the ridge solution against G
    let x = &views[1].data;
    let w = (x.transpose() * x + Mat::identity(8, 8) * DEFAULT_RIDGE).try_inverse().unwrap() * x.transpose() * &s.g;
    assert!((&w - &s.w[1]).abs().max() < 1e-8);
}

#[test]
fn gcca_rejects_bad_rank_and_shapes() {
    let views = vec![view(1, gaussian(10, 4, 1)), view(2, gaussian(10, 4, 2))];
    assert!(gcca_fit(&views, 0, plain(0.01)).is_err());
    assert!(gcca_fit(&views, 5, plain(0.01)).is_err());
    let short = vec![view(1, gaussian(10, 4, 1)), view(2, gaussian(9, 4, 2))];
    assert!(gcca_fit(&short, 2, plain(0.01)).is_err());
}

#[test]
fn unit_rms_scaling_is_scale_invariant() {
    let a = gaussian(25, 6, 7);
    let b = gaussian(25, 6, 8);
    let opts = GccaOptions { ridge: 0.01, scaling: ViewScaling::UnitRms };
    let s1 = gcca_fit(&[view(1, a.clone()), view(2, b.clone())], 3, opts).unwrap();
    let s2 = gcca_fit(&[view(1, a * 1000.0), view(2, b * 0.001)], 3, opts).unwrap();
    for (x, y) in s1.eigenvalues.iter().zip(&s2.eigenvalues) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn rank_selection_finds_planted_signal() {
    let n = 60;
    let shared = gaussian(n, 3, 11);
    let views: Vec<_> = (0..3)
        .map(|l| view(l + 1, &shared * gaussian(3, 10, 20 + l as u64) + gaussian(n, 10, 30 + l as u64) * 0.05))
        .collect();
    let opts = GccaOptions { ridge: 0.01, scaling: ViewScaling::UnitRms };
    let sel = gcca_rank_select(&views, 6, 200, 0.05, 1, opts).unwrap();
    assert_eq!(sel.r_hat, 3);
    assert_eq!(sel.null_spectra.len(), 200);
    assert_eq!(sel.thresholds.len(), 6);
    assert_eq!(sel, gcca_rank_select(&views, 6, 200, 0.05, 1, opts).unwrap());
    assert!(gcca_rank_select(&views, 6, 50, 0.05, 1, opts).is_err());
    assert!(gcca_rank_select(&views, 11, 200, 0.05, 1, opts).is_err());
}

#[test]
fn svd_variance_basis_reaches_fraction() {
    let x = view(3, gaussian(50, 8, 4) * Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![8.0, 4.0, 2.0, 1.0, 0.5, 0.5, 0.2, 0.1])));
    let b = svd_variance_basis(&x, 0.9).unwrap();
    assert!(b.explained_fraction >= 0.9);
    let smaller = svd_variance_basis(&x, 0.5).unwrap();
    assert!(smaller.k <= b.k);
    let tt = b.basis.transpose() * &b.basis;
    assert!((tt - Mat::identity(b.k, b.k)).abs().max() < 1e-10);
    let raw = LayerActivations::new(3, "ctx", gaussian(5, 3, 1)).unwrap();
    assert!(svd_variance_basis(&raw, 0.9).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gcca_is_row_permutation_equivariant(seed in 0u64..1000, r in 1usize..4) {
        let n = 20;
        let xs: Vec<Mat> = (0..3).map(|l| gaussian(n, 5, seed * 10 + l)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left((seed as usize % (n - 1)) + 1);
        perm.swap(0, n / 2);
        let views: Vec<_> = xs.iter().enumerate().map(|(l, x)| view(l + 1, x.clone())).collect();
        let permuted: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(l, x)| view(l + 1, Mat::from_fn(n, 5, |i, j| x[(perm[i], j)])))
            .collect();
        let a = gcca_fit(&views, r, plain(0.01)).unwrap();
        let b = gcca_fit(&permuted, r, plain(0.01)).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        // W is only defined up to the sign of each component
        for (wa, wb) in a.w.iter().zip(&b.w) {
            for c in 0..r {
                let (ca, cb) = (wa.column(c), wb.column(c));
                let diff = (ca - cb).abs().max().min((ca + cb).abs().max());
                prop_assert!(diff < 1e-8);
            }
        }
    }

    #[test]
    fn overlap_is_symmetric_and_bounded(seed in 0u64..10_000, d in 2usize..16) {
        let u = orthonormal(d, 1 + seed as usize % d, seed);
        let v = orthonormal(d, 1 + (seed as usize / 3) % d, seed + 1);
        let a = principal_angle_overlap(&u, &v).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - principal_angle_overlap(&v, &u).unwrap()).abs() < 1e-12);
    }
}
