mod common;

use common::{assert_close, dist2, kkt_pattern_projection, support_enumeration_projection};
use fedlaw_core::simplex::{
    cap_decomposition, max_pairwise_distance, project_capped_simplex, project_sparse_capped_simplex, SimplexSpec,
};
use proptest::prelude::*;

fn vector(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(|n| prop::collection::vec(-2.0f64..2.0, n))
}

/// `(h, s, t)` with `s * t >= 1`.
fn sparse_instance() -> impl Strategy<Value = (Vec<f64>, usize, f64)> {
    (1usize..=8).prop_flat_map(|n| {
        (1..=n.min(4)).prop_flat_map(move |s| (prop::collection::vec(-2.0f64..2.0, n), Just(s), (1.0 / s as f64)..=1.0))
    })
}

fn in_set(w: &[f64], s: usize, t: f64) {
    let sum: f64 = w.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
    assert!(w.iter().all(|&v| v >= -1e-12 && v <= t + 1e-12), "{w:?} cap {t}");
    assert!(w.iter().filter(|&&v| v != 0.0).count() <= s, "{w:?} s {s}");
}

#[test]
fn dense_projection_matches_worked_examples() {
    assert_close(
        &project_capped_simplex(&[0.2, 0.3, 0.5], 1.0).unwrap(),
        &[0.2, 0.3, 0.5],
        1e-15,
        "fixed",
    );
    assert_close(
        &project_capped_simplex(&[1.0, 1.0, 1.0, 1.0], 0.25).unwrap(),
        &[0.25; 4],
        1e-15,
        "forced",
    );
    assert_close(
        &project_capped_simplex(&[3.0, 0.0, 0.0], 0.5).unwrap(),
        &[0.5, 0.25, 0.25],
        1e-12,
        "capped",
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dense_projection_matches_kkt_enumeration(y in vector(1..=7), t_frac in 0.0f64..1.0) {
        let n = y.len();
        let t = 1.0 / n as f64 + t_frac * (1.0 - 1.0 / n as f64);
        let w = project_capped_simplex(&y, t).unwrap();
        let oracle = kkt_pattern_projection(&y, t);
        prop_assert!(dist2(&w, &y) <= dist2(&oracle, &y) + 1e-9);
        assert_close(&w, &oracle, 1e-7, "dense vs KKT");
    }

    #[test]
    fn sparse_projection_is_optimal((h, s, t) in sparse_instance()) {
        let spec = SimplexSpec::new(h.len(), s, t).unwrap();
        let w = project_sparse_capped_simplex(&h, &spec).unwrap();
        in_set(w.as_slice(), s, spec.t());
        let (best, _) = support_enumeration_projection(&h, s, spec.t());
        prop_assert!(dist2(w.as_slice(), &h) <= best + 1e-9);
    }

    #[test]
    fn projection_is_idempotent((h, s, t) in sparse_instance()) {
        let spec = SimplexSpec::new(h.len(), s, t).unwrap();
        let w = project_sparse_capped_simplex(&h, &spec).unwrap();
        let again = project_sparse_capped_simplex(w.as_slice(), &spec).unwrap();
        assert_close(again.as_slice(), w.as_slice(), 1e-12, "idempotence");
    }

    #[test]
    fn dense_projection_preserves_order(y in vector(2..=12), t_frac in 0.0f64..1.0) {
        let n = y.len();
        let t = 1.0 / n as f64 + t_frac * (1.0 - 1.0 / n as f64);
        let w = project_capped_simplex(&y, t).unwrap();
        for i in 0..n {
            for j in 0..n {
                if y[i] > y[j] {
                    prop_assert!(w[i] >= w[j] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn dense_projection_ignores_uniform_shifts(y in vector(1..=10), shift in -5.0f64..5.0) {
        let t = 0.6f64.max(1.0 / y.len() as f64);
        let a = project_capped_simplex(&y, t).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let b = project_capped_simplex(&shifted, t).unwrap();
        assert_close(&a, &b, 1e-9, "shift");
    }

    #[test]
    fn forced_uniform_support(h in vector(5..=20), b_frac in 0.0f64..0.5) {
        let n = h.len();
        let b_f = (b_frac * n as f64) as usize;
        let s = n - b_f;
        let spec = SimplexSpec::new(n, s, 1.0 / s as f64).unwrap();
        let w = project_sparse_capped_simplex(&h, &spec).unwrap();
        prop_assert_eq!(w.nnz(), s);
        for &v in w.as_slice().iter().filter(|&&v| v != 0.0) {
            prop_assert!((v - 1.0 / s as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn pairwise_distance_bound_holds((a, b, s, t) in (2usize..=8).prop_flat_map(|n| (1..=n).prop_flat_map(move |s| (
        prop::collection::vec(-2.0f64..2.0, n), prop::collection::vec(-2.0f64..2.0, n), Just(s), (1.0 / s as f64)..=1.0)))) {
        let spec = SimplexSpec::new(a.len(), s, t).unwrap();
        let wa = project_sparse_capped_simplex(&a, &spec).unwrap();
        let wb = project_sparse_capped_simplex(&b, &spec).unwrap();
        let bound = max_pairwise_distance(&spec).unwrap();
        prop_assert!(dist2(wa.as_slice(), wb.as_slice()).sqrt() <= bound + 1e-12);
    }
}

#[test]
fn pairwise_bound_is_attained_by_disjoint_vertices() {
    // Two vertices with disjoint supports realise the bound.
    for (n, s, t) in [(6, 3, 1.0 / 3.0), (8, 4, 0.3), (5, 5, 0.45)] {
        let spec = SimplexSpec::new(n, s, t).unwrap();
        let (k, r) = cap_decomposition(spec.t());
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let width = k + usize::from(r > 0.0);
        if 2 * width > n {
            continue;
        }
        for i in 0..k {
            a[i] = spec.t();
            b[width + i] = spec.t();
        }
        if r > 0.0 {
            a[k] = r;
            b[width + k] = r;
        }
        let bound = max_pairwise_distance(&spec).unwrap();
        assert!((dist2(&a, &b).sqrt() - bound).abs() <= 1e-12);
    }
}

#[test]
fn integer_reciprocal_caps_give_sqrt_two_t() {
    for m in 1..=20usize {
        let t = 1.0 / m as f64;
        let spec = SimplexSpec::new(40, m, t).unwrap();
        assert_eq!(max_pairwise_distance(&spec).unwrap(), (2.0 * t).sqrt(), "1/t = {m}");
    }
}

#[test]
fn infeasible_specs_are_rejected() {
    let spec = SimplexSpec::new(5, 2, 0.3).unwrap();
    assert!(!spec.feasible());
    assert!(project_sparse_capped_simplex(&[0.1; 5], &spec).is_err());
    assert!(max_pairwise_distance(&spec).is_err());
}
