mod common;

use common::{random_stable_model, reference};
use gauss_markov::rng::stream_rng;
use gauss_markov::{linalg, semigroup, TransitionKernel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Van Loan: the exponential of `[[-A, Q], [0, Aᵀ]]·t` carries `L(t)⁻¹Q(t)` in its corner.
fn van_loan(a: &DMatrix<f64>, q: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-a));
    m.view_mut((0, n), (n, n)).copy_from(q);
    m.view_mut((n, n), (n, n)).copy_from(&a.transpose());
    let e = (m * t).exp();
    let f22 = e.view((n, n), (n, n)).into_owned();
    let f12 = e.view((0, n), (n, n)).into_owned();
    f22.transpose() * f12
}

#[test]
fn covariance_matches_van_loan_on_random_models() {
    let mut r = stream_rng(11, 0);
    for n in 1..=8 {
        let m = random_stable_model(&mut r, n);
        for &t in &[0.05, 0.7, 3.0] {
            let q = semigroup::covariance(&m, t).unwrap();
            let vl = van_loan(m.a(), m.q_diff(), t);
            assert!((&q - &vl).norm() <= 1e-10 * (1.0 + vl.norm()), "n={n} t={t}");
        }
    }
}

#[test]
fn long_time_covariance_approaches_stationary() {
    let mut r = stream_rng(12, 0);
    for n in 1..=6 {
        let m = random_stable_model(&mut r, n);
        let q = semigroup::covariance(&m, 60.0).unwrap();
        let st = semigroup::stationary(&m).unwrap();
        assert!((&q - st.cov()).norm() <= 1e-9 * (1.0 + q.norm()));
    }
}

#[test]
fn lyapunov_flow_derivative_at_zero() {
    let m = reference();
    let h = 1e-6;
    let q = semigroup::covariance(&m, h).unwrap();
    assert!((q[(0, 0)] / h - 2.0).abs() < 1e-5);
}

#[test]
fn kernel_cache_reuses_snapshots() {
    let fam = TransitionKernel::new(reference());
    let x = DVector::zeros(1);
    for _ in 0..3 {
        fam.kernel(0.5, &x).unwrap();
        fam.kernel(1.0, &x).unwrap();
    }
    assert_eq!(fam.cached_times(), 2);
}

#[test]
fn reference_oracles() {
    let m = reference();
    let x = DVector::zeros(1);
    let e = std::f64::consts::E;
    assert!((semigroup::mean(&m, 1.0, &x).unwrap()[0] - (1.0 - 1.0 / e)).abs() < 1e-12);
    assert!((semigroup::covariance(&m, 1.0).unwrap()[(0, 0)] - (1.0 - e.powi(-2))).abs() < 1e-12);
    let cc = semigroup::cross_covariance(&m, 0.5, 1.0).unwrap()[(0, 0)];
    assert!((cc - (-0.5f64).exp() * (1.0 - 1.0 / e)).abs() < 1e-12);
    assert!((semigroup::b_h(&m).unwrap()[0] - 0.5).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chapman_kolmogorov_holds(seed in 0u64..10_000, n in 1usize..7, s in 0.01f64..2.0, t in 0.01f64..2.0) {
        let mut r = stream_rng(seed, 0);
        let m = random_stable_model(&mut r, n);
        let x = common::normal_vector(&mut r, n);
        let rep = semigroup::verify_chapman_kolmogorov(&m, s, t, &x, 1e-9).unwrap();
        prop_assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn covariance_is_psd_and_monotone(seed in 0u64..10_000, n in 1usize..7, t in 0.01f64..3.0) {
        let mut r = stream_rng(seed, 1);
        let m = random_stable_model(&mut r, n);
        let q1 = semigroup::covariance(&m, t).unwrap();
        let q2 = semigroup::covariance(&m, 1.5 * t).unwrap();
        let s1 = linalg::SymSpectrum::new(&q1).unwrap();
        prop_assert!(s1.min_value() >= -1e-10 * s1.max_abs_value());
        let d = linalg::SymSpectrum::new(&(q2 - &q1)).unwrap();
        prop_assert!(d.min_value() >= -1e-9 * (1.0 + s1.max_abs_value()));
    }

    #[test]
    fn evolution_is_a_semigroup(seed in 0u64..10_000, n in 1usize..7, s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let mut r = stream_rng(seed, 2);
        let m = random_stable_model(&mut r, n);
        let ls = semigroup::evolution_operator(&m, s).unwrap();
        let lt = semigroup::evolution_operator(&m, t).unwrap();
        let lst = semigroup::evolution_operator(&m, s + t).unwrap();
        prop_assert!((&ls * &lt - &lst).norm() <= 1e-11 * (1.0 + lst.norm()));
    }
}
