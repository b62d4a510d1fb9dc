mod common;

use common::{normal_matrix, normal_vector, random_psd};
use gauss_markov::gaussian::{self, JointGaussian};
use gauss_markov::linalg::{SymSpectrum, DEFAULT_REL_TOL};
use gauss_markov::rng::stream_rng;
use gauss_markov::GaussianMeasure;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Joint law of `(X, Y)` with `Y = M X + noise`, possibly with singular `C_X`.
fn random_joint(seed: u64, nx: usize, ny: usize, rank_x: usize) -> JointGaussian {
    let mut r = stream_rng(seed, 0);
    let mx = normal_vector(&mut r, nx);
    let cx = random_psd(&mut r, nx, rank_x);
    let m = normal_matrix(&mut r, ny, nx);
    let noise = random_psd(&mut r, ny, ny);
    let cy = &m * &cx * m.transpose() + noise;
    let cxy = &cx * m.transpose();
    JointGaussian::new(mx, normal_vector(&mut r, ny), cx, cy, cxy).unwrap()
}

/// Conditional mean and variance of a 1-D/1-D joint from the bivariate density on a grid.
fn grid_oracle(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, x: f64) -> (f64, f64) {
    let det = vx * vy - cxy * cxy;
    let sd = vy.sqrt();
    let (lo, hi, n) = (my - 40.0 * sd, my + 40.0 * sd, 200_000);
    let h = (hi - lo) / n as f64;
    let dens = |y: f64| {
        let (dx, dy) = (x - mx, y - my);
        (-(vy * dx * dx - 2.0 * cxy * dx * dy + vx * dy * dy) / (2.0 * det)).exp()
    };
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for k in 0..=n {
        let y = lo + k as f64 * h;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        let p = w * dens(y);
        z += p;
        m1 += p * y;
        m2 += p * y * y;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

#[test]
fn scalar_conditional_matches_density_oracle() {
    let cases = [(0.0, 0.0, 1.0, 1.0, 0.5, 0.3), (1.0, -2.0, 2.0, 3.0, -1.2, 4.0), (0.5, 0.1, 0.3, 0.2, 0.05, -1.0)];
    for &(mx, my, vx, vy, cxy, x) in &cases {
        let j = JointGaussian::new(
            DVector::from_element(1, mx),
            DVector::from_element(1, my),
            DMatrix::from_element(1, 1, vx),
            DMatrix::from_element(1, 1, vy),
            DMatrix::from_element(1, 1, cxy),
        )
        .unwrap();
        let c = gaussian::conditional(&j, &DVector::from_element(1, x), DEFAULT_REL_TOL).unwrap();
        let (om, ov) = grid_oracle(mx, my, vx, vy, cxy, x);
        assert!((c.mean()[0] - om).abs() < 1e-6, "{} vs {om}", c.mean()[0]);
        assert!((c.cov()[(0, 0)] - ov).abs() < 1e-6, "{} vs {ov}", c.cov()[(0, 0)]);
    }
}

#[test]
fn residual_is_independent_of_observation() {
    let j = random_joint(5, 2, 2, 2);
    let joint = j.as_measure();
    let draws = gaussian::sample(&joint, 17, 100_000).unwrap();
    let reg = gaussian::regression_operator(&j, DEFAULT_REL_TOL).unwrap();
    let n = draws.len() as f64;
    // correlation of each residual component with each observed component
    for a in 0..2 {
        for b in 0..2 {
            let mut s = [0.0; 5];
            for d in &draws {
                let x = d.rows(0, 2).into_owned();
                let y = d.rows(2, 2).into_owned();
                let pred = &j.m_y + &reg.k_t * (&reg.c_x_inv_sqrt * (&x - &j.m_x));
                let (u, v) = (x[a], (y - pred)[b]);
                s[0] += u;
                s[1] += v;
                s[2] += u * u;
                s[3] += v * v;
                s[4] += u * v;
            }
            let cov = s[4] / n - s[0] * s[1] / n / n;
            let corr = cov / ((s[2] / n - (s[0] / n).powi(2)) * (s[3] / n - (s[1] / n).powi(2))).sqrt();
            assert!((corr * n.sqrt()).abs() < 4.0, "corr {corr}");
        }
    }
}

#[test]
fn inconsistent_joint_is_rejected() {
    // C_X singular but C_XY reaches outside its range
    let j = JointGaussian {
        m_x: DVector::zeros(2),
        m_y: DVector::zeros(1),
        c_x: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        c_y: DMatrix::from_element(1, 1, 1.0),
        c_xy: DMatrix::from_row_slice(2, 1, &[0.1, 0.5]),
    };
    assert!(gaussian::regression_operator(&j, DEFAULT_REL_TOL).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditional_covariance_is_psd_and_x_free(seed in 0u64..100_000, nx in 1usize..9, ny in 1usize..9, deficit in 0usize..3) {
        let rank = nx.saturating_sub(deficit).max(1);
        let j = random_joint(seed, nx, ny, rank);
        let mut r = stream_rng(seed, 9);
        let x1 = &j.m_x + &j.c_x * normal_vector(&mut r, nx);
        let x2 = &j.m_x + &j.c_x * normal_vector(&mut r, nx);
        let c1 = gaussian::conditional(&j, &x1, DEFAULT_REL_TOL).unwrap();
        let c2 = gaussian::conditional(&j, &x2, DEFAULT_REL_TOL).unwrap();
        prop_assert_eq!(c1.cov(), c2.cov());
        let s = SymSpectrum::new(c1.cov()).unwrap();
        prop_assert!(s.min_value() >= -1e-10 * (1.0 + j.c_y.norm()));
        // conditioning never increases the covariance
        let gap = SymSpectrum::new(&(&j.c_y - c1.cov())).unwrap();
        prop_assert!(gap.min_value() >= -1e-9 * (1.0 + j.c_y.norm()));
    }

    #[test]
    fn range_projector_is_an_orthogonal_projection(seed in 0u64..100_000, n in 1usize..9, deficit in 0usize..4) {
        let mut r = stream_rng(seed, 3);
        let c = random_psd(&mut r, n, n.saturating_sub(deficit).max(1));
        let s = SymSpectrum::new(&c).unwrap();
        let p = s.range_projector(DEFAULT_REL_TOL);
        prop_assert!((&p * &p - &p).norm() < 1e-10);
        prop_assert!((&p - p.transpose()).norm() < 1e-12);
        prop_assert!((&p * &c - &c).norm() < 1e-9 * (1.0 + c.norm()));
    }

    #[test]
    fn pushforward_composes_with_convolution(seed in 0u64..100_000, n in 1usize..6) {
        let mut r = stream_rng(seed, 4);
        let mu = GaussianMeasure::new(normal_vector(&mut r, n), random_psd(&mut r, n, n)).unwrap();
        let nu = GaussianMeasure::new(normal_vector(&mut r, n), random_psd(&mut r, n, n)).unwrap();
        let t = normal_matrix(&mut r, n, n);
        let lhs = gaussian::affine_pushforward(&gaussian::convolve(&mu, &nu).unwrap(), &t, &DVector::zeros(n)).unwrap();
        let rhs = gaussian::convolve(
            &gaussian::affine_pushforward(&mu, &t, &DVector::zeros(n)).unwrap(),
            &gaussian::affine_pushforward(&nu, &t, &DVector::zeros(n)).unwrap(),
        ).unwrap();
        prop_assert!((lhs.mean() - rhs.mean()).norm() < 1e-10 * (1.0 + lhs.mean().norm()));
        prop_assert!((lhs.cov() - rhs.cov()).norm() < 1e-10 * (1.0 + lhs.cov().norm()));
    }
}
