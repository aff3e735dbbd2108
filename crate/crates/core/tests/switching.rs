mod common;

use common::*;
use geoldp::geometry::{Manifold, Point};
use geoldp::switching::*;
use geoldp::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn q2(a: f64, b: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-a, a, b, -b])
}

#[test]
fn rate_matrix_examples() {
    let x = Manifold::Euclidean(1).origin();
    let field = RateFamily::Matrix(q2(1.0, 1.0));
    assert_eq!(rate_matrix(&field, &x, true).unwrap(), q2(1.0, 1.0));
    let field = RateFamily::Matrix(q2(1.0, 2.0));
    assert!(rate_matrix(&field, &x, true).is_ok());
    let bad = FnRates {
        n_states: 2,
        max_exit_rate: 2.0,
        matrix: |_: &Point| DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 2.0, -2.0]),
    };
    assert!(matches!(rate_matrix(&bad, &x, true), Err(Error::InvalidGenerator(_))));
    // validation can be skipped
    assert!(rate_matrix(&bad, &x, false).is_ok());
}

#[test]
fn invariant_measure_examples() {
    let pi = invariant_measure(&q2(3.0, 3.0)).unwrap();
    assert!((pi.weights()[0] - 0.5).abs() < 1e-15);
    // pi Q = 0: -pi1 + 2 pi2 = 0 with pi1 + pi2 = 1
    let pi = invariant_measure(&q2(1.0, 2.0)).unwrap();
    assert!((pi.weights()[0] - 2.0 / 3.0).abs() < 1e-14);
    assert!((pi.weights()[1] - 1.0 / 3.0).abs() < 1e-14);
    let x = Manifold::Euclidean(1).origin();
    let cycle = RateFamily::Cycle3 { rate: 1.0 }.matrix(&x);
    for w in invariant_measure(&cycle).unwrap().weights() {
        assert!((w - 1.0 / 3.0).abs() < 1e-14);
    }
    let reducible = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(invariant_measure(&reducible).is_err());
}

#[test]
fn averaged_drift_examples() {
    let x = Manifold::Euclidean(2).point(&[0.4, 0.1]).unwrap();
    let sym = DriftFamily::TwoState { beta: 1.7 };
    let v = averaged_drift(&sym, &RateFamily::TwoState { a: 2.0, b: 2.0 }, &x).unwrap();
    assert!(v.norm() < 1e-15);

    let single = DriftFamily::States(vec![vec![0.3, -0.2]]);
    let v = averaged_drift(&single, &RateFamily::Single, &x).unwrap();
    assert_eq!(v.components(), &[0.3, -0.2]);

    let pi = invariant_measure(&q2(1.0, 2.0)).unwrap();
    let drift = DriftFamily::States(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let v = averaged_drift(&drift, &RateFamily::Matrix(q2(1.0, 2.0)), &x).unwrap();
    assert!((v.components()[0] - pi.weights()[0]).abs() < 1e-14);
    assert!((v.components()[1] - pi.weights()[1]).abs() < 1e-14);
}

#[test]
fn donsker_varadhan_vanishes_at_the_invariant_measure() {
    for q in [q2(1.0, 2.0), q2(0.3, 5.0)] {
        let pi = invariant_measure(&q).unwrap();
        assert!(donsker_varadhan(&q, &pi).unwrap() <= 1e-8);
    }
}

#[test]
fn donsker_varadhan_matches_ratio_grid_search() {
    // for g = (1, r) the objective is 0.9 (r - 1) + 0.1 (1/r - 1)
    let (w1, w2) = (0.9, 0.1);
    let mut best = f64::INFINITY;
    let steps = 2_000_000;
    for k in 0..=steps {
        let r = (-6.0 + 12.0 * k as f64 / steps as f64).exp();
        best = best.min(w1 * (r - 1.0) + w2 * (1.0 / r - 1.0));
    }
    let pi = ProbVector::new(vec![w1, w2]).unwrap();
    let value = donsker_varadhan(&q2(1.0, 1.0), &pi).unwrap();
    assert!((value + best).abs() < 1e-6, "{value} vs {}", -best);
}

#[test]
fn generator_validation_catches_small_perturbations() {
    let x = Manifold::Euclidean(1).origin();
    let base = RateFamily::Cycle3 { rate: 1.3 }.matrix(&x);
    assert!(validate_generator(&base).is_ok());
    for i in 0..3 {
        for j in 0..3 {
            for delta in [1e-8, -1e-8, 1e-3] {
                let mut q = base.clone();
                q[(i, j)] += delta;
                assert!(validate_generator(&q).is_err(), "missed ({i},{j}) {delta}");
            }
        }
    }
}

fn arb_generator(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(0.1..3.0f64, n * n).prop_map(move |w| {
        let mut q = DMatrix::from_row_slice(n, n, &w);
        for i in 0..n {
            q[(i, i)] = 0.0;
            let s: f64 = q.row(i).sum();
            q[(i, i)] = -s;
        }
        q
    })
}

fn arb_prob(n: usize) -> impl Strategy<Value = ProbVector> {
    proptest::collection::vec(0.02..1.0f64, n).prop_map(|w| ProbVector::normalized(w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn invariant_measure_is_stationary(q in arb_generator(4)) {
        let pi = invariant_measure(&q).unwrap();
        let w = pi.weights();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..4 {
            let flow: f64 = (0..4).map(|i| w[i] * q[(i, j)]).sum();
            prop_assert!(flow.abs() < 1e-12);
            prop_assert!(w[j] > 0.0);
        }
        prop_assert!(donsker_varadhan(&q, &pi).unwrap() <= 1e-8);
    }

    #[test]
    fn donsker_varadhan_is_nonnegative_and_convex(q in arb_generator(3), a in arb_prob(3), b in arb_prob(3)) {
        let ia = donsker_varadhan(&q, &a).unwrap();
        let ib = donsker_varadhan(&q, &b).unwrap();
        let mid = ProbVector::new(
            a.weights().iter().zip(b.weights()).map(|(x, y)| 0.5 * (x + y)).collect(),
        ).unwrap();
        let im = donsker_varadhan(&q, &mid).unwrap();
        prop_assert!(ia >= 0.0 && ib >= 0.0);
        prop_assert!(im <= 0.5 * (ia + ib) + 1e-8);
    }

    #[test]
    fn averaged_drift_is_relabeling_invariant(q in arb_generator(3), d in proptest::collection::vec(-2.0..2.0f64, 6), x in arb_point_on(Manifold::Euclidean(2))) {
        let drifts: Vec<Vec<f64>> = d.chunks(2).map(|c| c.to_vec()).collect();
        let base = averaged_drift(&DriftFamily::States(drifts.clone()), &RateFamily::Matrix(q.clone()), &x).unwrap();
        let perm = [2usize, 0, 1];
        let pq = DMatrix::from_fn(3, 3, |i, j| q[(perm[i], perm[j])]);
        let pd: Vec<Vec<f64>> = perm.iter().map(|&i| drifts[i].clone()).collect();
        let permuted = averaged_drift(&DriftFamily::States(pd), &RateFamily::Matrix(pq), &x).unwrap();
        for (u, v) in base.components().iter().zip(permuted.components()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn builtin_families_yield_valid_generators(x in arb_point(), a0 in 0.5..3.0f64, frac in -0.9..0.9f64) {
        let fields = [
            RateFamily::TwoStateSpatial { a0, a1: frac * a0 },
            RateFamily::Cycle3 { rate: a0 },
            RateFamily::TwoState { a: a0, b: 1.0 },
        ];
        for field in fields {
            let q = rate_matrix(&field, &x, true).unwrap();
            prop_assert!(is_irreducible(&q));
            for i in 0..q.nrows() {
                prop_assert!(-q[(i, i)] <= field.max_exit_rate() + 1e-12);
            }
        }
    }
}
