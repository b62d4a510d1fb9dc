//! Forward direction: evolution operators, means, covariances and kernels of
//! the Gauss–Markov family generated by a [`GeneratorModel`].

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use parking_lot::RwLock;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::GaussianMeasure;
use crate::linalg::{self, DEFAULT_REL_TOL};
use crate::model::GeneratorModel;

/// Tolerance on the change of `Q(t)` under step halving in the Lyapunov flow,
/// relative to `max(1, ‖Q(t)‖_F)`.
pub const LYAPUNOV_STEP_TOL: f64 = 1e-10;

const MAX_RK4_STEPS: usize = 1 << 22;

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::NegativeTime(t));
    }
    Ok(())
}

/// `exp(tA)` and `g(t) = ∫₀ᵗ exp(sA) b ds`, read off the exponential of the
/// augmented generator `[[A, b], [0, 0]]`.
fn flow(model: &GeneratorModel, t: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = model.dim();
    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(model.a());
    aug.view_mut((0, n), (n, 1)).copy_from(model.b_v());
    let e = (aug * t).exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, 1)).column(0).into_owned())
}

/// `L(t) = exp(tA)`.
pub fn evolution_operator(model: &GeneratorModel, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    Ok((model.a() * t).exp())
}

/// `g(t) = m(t, 0) = ∫₀ᵗ exp(sA) b_V ds`.
pub fn drift_trace(model: &GeneratorModel, t: f64) -> Result<DVector<f64>> {
    check_time(t)?;
    Ok(flow(model, t).1)
}

/// `m(t, x) = exp(tA) x + g(t)`.
pub fn mean(model: &GeneratorModel, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_time(t)?;
    check_state(model, x)?;
    let (l, g) = flow(model, t);
    Ok(l * x + g)
}

fn check_state(model: &GeneratorModel, x: &DVector<f64>) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Shape(format!(
            "state has length {}, model dimension is {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(())
}

fn lyapunov_rhs(a: &DMatrix<f64>, q_diff: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let aq = a * q;
    let aq_t = aq.transpose();
    aq + aq_t + q_diff
}

fn rk4_lyapunov(a: &DMatrix<f64>, q_diff: &DMatrix<f64>, t: f64, steps: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let h = t / steps as f64;
    let mut q = DMatrix::<f64>::zeros(n, n);
    for _ in 0..steps {
        let k1 = lyapunov_rhs(a, q_diff, &q);
        let k2 = lyapunov_rhs(a, q_diff, &(&q + &k1 * (0.5 * h)));
        let k3 = lyapunov_rhs(a, q_diff, &(&q + &k2 * (0.5 * h)));
        let k4 = lyapunov_rhs(a, q_diff, &(&q + &k3 * h));
        q += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    }
    q
}

/// Integrates `dQ/dt = AQ + QAᵀ + Q_diff`, `Q(0) = 0` with classical RK4,
/// halving the step until the result moves by less than
/// [`LYAPUNOV_STEP_TOL`], then applies one Richardson correction.
pub fn lyapunov_flow(a: &DMatrix<f64>, q_diff: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    let n = a.nrows();
    if t == 0.0 || q_diff.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    // keep h·‖A‖ ≤ 1/2 so the first pass is already in RK4's stable region
    let mut steps = ((2.0 * t * a.norm()).ceil() as usize).max(4);
    let mut coarse = rk4_lyapunov(a, q_diff, t, steps);
    loop {
        steps *= 2;
        let fine = rk4_lyapunov(a, q_diff, t, steps);
        let change = (&fine - &coarse).norm();
        if change < LYAPUNOV_STEP_TOL * fine.norm().max(1.0) || steps >= MAX_RK4_STEPS {
            let extrapolated = &fine + (&fine - &coarse) / 15.0;
            return Ok(linalg::symmetrize(&extrapolated));
        }
        coarse = fine;
    }
}

/// `Q(t) = ∫₀ᵗ exp(sA) Q_diff exp(sA)ᵀ ds`.
pub fn covariance(model: &GeneratorModel, t: f64) -> Result<DMatrix<f64>> {
    lyapunov_flow(model.a(), model.q_diff(), t)
}

/// `Q(s, t) = exp((t − s)A) Q(s)`, the covariance of `Z(t)` with `Z(s)`.
pub fn cross_covariance(model: &GeneratorModel, s: f64, t: f64) -> Result<DMatrix<f64>> {
    check_time(s)?;
    if s > t {
        return Err(Error::Invalid(format!("cross covariance needs s <= t, got s={s}, t={t}")));
    }
    Ok(evolution_operator(model, t - s)? * covariance(model, s)?)
}

/// `μ(t, x) = N(m(t, x), Q(t))`.
pub fn kernel(model: &GeneratorModel, t: f64, x: &DVector<f64>) -> Result<GaussianMeasure> {
    let m = mean(model, t, x)?;
    let q = covariance(model, t)?;
    GaussianMeasure::clamped(m, q, 0.0)
}

/// `b_H = (λI − A)^{-1} b_V`.
pub fn b_h(model: &GeneratorModel) -> Result<DVector<f64>> {
    model.b_h()
}

/// Invariant law `N(−A^{-1} b_V, Q_∞)` with `A Q_∞ + Q_∞ Aᵀ + Q_diff = 0`.
/// Requires a stable `A`.
pub fn stationary(model: &GeneratorModel) -> Result<GaussianMeasure> {
    let abscissa = linalg::spectral_abscissa(model.a());
    if abscissa >= 0.0 {
        return Err(Error::Invalid(format!(
            "no invariant law: spectral abscissa of A is {abscissa}"
        )));
    }
    let mean = model
        .a()
        .clone()
        .lu()
        .solve(model.b_v())
        .ok_or_else(|| Error::Singular("A".into()))?
        * -1.0;
    let q_inf = linalg::solve_lyapunov(model.a(), model.q_diff())?;
    GaussianMeasure::clamped(mean, q_inf, 0.0)
}

/// Numerical rank of `Q(t)`; full rank for `t > 0` is the finite-dimensional
/// form of the nondegeneracy hypothesis on the kernels.
pub fn covariance_rank(model: &GeneratorModel, t: f64) -> Result<usize> {
    linalg::numerical_rank(&covariance(model, t)?, DEFAULT_REL_TOL)
}

/// Everything the family needs at one time point.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub evolution: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// The family `{μ(t, x)}` of a model, caching per-time snapshots.
///
/// Entries are keyed by the exact bit pattern of `t`, so repeated evaluation
/// on a fixed grid reuses the matrix exponential and Lyapunov solve.
#[derive(Debug)]
pub struct TransitionKernel {
    model: GeneratorModel,
    cache: RwLock<HashMap<u64, Arc<Snapshot>>>,
}

impl TransitionKernel {
    pub fn new(model: GeneratorModel) -> Self {
        Self { model, cache: RwLock::new(HashMap::new()) }
    }

    pub fn model(&self) -> &GeneratorModel {
        &self.model
    }

    pub fn snapshot(&self, t: f64) -> Result<Arc<Snapshot>> {
        check_time(t)?;
        let key = t.to_bits();
        if let Some(hit) = self.cache.read().get(&key) {
            return Ok(hit.clone());
        }
        let (evolution, drift) = flow(&self.model, t);
        let covariance = covariance(&self.model, t)?;
        let snap = Arc::new(Snapshot { evolution, drift, covariance });
        Ok(self.cache.write().entry(key).or_insert(snap).clone())
    }

    pub fn evolution(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.snapshot(t)?.evolution.clone())
    }

    pub fn mean(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_state(&self.model, x)?;
        let s = self.snapshot(t)?;
        Ok(&s.evolution * x + &s.drift)
    }

    pub fn covariance(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.snapshot(t)?.covariance.clone())
    }

    pub fn cross_covariance(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        check_time(s)?;
        if s > t {
            return Err(Error::Invalid(format!("cross covariance needs s <= t, got s={s}, t={t}")));
        }
        Ok(&self.snapshot(t - s)?.evolution * &self.snapshot(s)?.covariance)
    }

    pub fn kernel(&self, t: f64, x: &DVector<f64>) -> Result<GaussianMeasure> {
        let m = self.mean(t, x)?;
        GaussianMeasure::clamped(m, self.covariance(t)?, 0.0)
    }

    pub fn cached_times(&self) -> usize {
        self.cache.read().len()
    }
}

/// Residuals of the kernel composition law `μ(s+t, x) = ∫ μ(t, y) μ(s, x)(dy)`,
/// reduced to its mean and covariance parts.
#[derive(Debug, Clone, Serialize)]
pub struct ChapmanKolmogorovReport {
    pub s: f64,
    pub t: f64,
    /// `‖m(t, m(s, x)) − m(s + t, x)‖`
    pub r_mean: f64,
    /// `‖Q(t) + L(t) Q(s) L(t)ᵀ − Q(s + t)‖_F`
    pub r_cov: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn verify_chapman_kolmogorov(
    model: &GeneratorModel,
    s: f64,
    t: f64,
    x: &DVector<f64>,
    tol: f64,
) -> Result<ChapmanKolmogorovReport> {
    check_time(s)?;
    check_time(t)?;
    check_state(model, x)?;
    let (l_s, g_s) = flow(model, s);
    let (l_t, g_t) = flow(model, t);
    let (l_st, g_st) = flow(model, s + t);
    let m_s = &l_s * x + g_s;
    let composed = &l_t * m_s + g_t;
    let direct = &l_st * x + g_st;
    let r_mean = (composed - direct).norm();

    let q_s = covariance(model, s)?;
    let q_t = covariance(model, t)?;
    let q_st = covariance(model, s + t)?;
    let r_cov = (q_t + &l_t * q_s * l_t.transpose() - q_st).norm();
    Ok(ChapmanKolmogorovReport {
        s,
        t,
        r_mean,
        r_cov,
        tol,
        pass: r_mean <= tol && r_cov <= tol,
    })
}
