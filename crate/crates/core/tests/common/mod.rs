#![allow(dead_code)]

use gauss_markov::linalg;
use gauss_markov::rng::{self, StreamRng};
use gauss_markov::GeneratorModel;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn reference() -> GeneratorModel {
    GeneratorModel::scalar(-1.0, 1.0, 2.0, Some(1.0)).unwrap()
}

pub fn normal_matrix(r: &mut StreamRng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng::standard_normal(r))
}

pub fn normal_vector(r: &mut StreamRng, n: usize) -> DVector<f64> {
    rng::standard_normal_vector(r, n)
}

/// `B Bᵀ / n` with Gaussian `B`, of rank `rank`.
pub fn random_psd(r: &mut StreamRng, n: usize, rank: usize) -> DMatrix<f64> {
    let b = normal_matrix(r, n, rank);
    &b * b.transpose() / n as f64
}

/// Random model whose spectral abscissa lies in `[-1.5, -0.5]`.
pub fn random_stable_model(r: &mut StreamRng, n: usize) -> GeneratorModel {
    let m = normal_matrix(r, n, n) / (n as f64).sqrt();
    let shift = linalg::spectral_abscissa(&m) + r.random_range(0.5..1.5);
    let a = m - DMatrix::identity(n, n) * shift;
    GeneratorModel::new(a, normal_vector(r, n), random_psd(r, n, n), None).unwrap()
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn corpus() -> Vec<gauss_markov::generator::CorpusCase> {
    (0..10).map(|s| gauss_markov::generator::corpus_case(s).unwrap()).collect()
}
