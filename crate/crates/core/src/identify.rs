//! Inverse direction: recover `(L, A, b, Q)` from tables of kernel means and
//! covariances, and test whether the tables can come from a Gauss–Markov
//! family at all.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianMeasure};
use crate::linalg::{self, SymSpectrum, DEFAULT_REL_TOL};
use crate::model::GeneratorModel;
use crate::rng;
use crate::semigroup::TransitionKernel;

/// Sampled kernel family: `m(t_i, x^(j))` and `Q(t_i)` on a time grid and a
/// probe set that contains the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSamples {
    pub dim: usize,
    pub times: Vec<f64>,
    pub probes: Vec<Vec<f64>>,
    /// `means[time][probe][component]`
    pub means: Vec<Vec<Vec<f64>>>,
    /// `covs[time][row][col]`
    pub covs: Vec<Vec<Vec<f64>>>,
    /// Optional per-probe covariances `probe_covs[time][probe][row][col]`,
    /// used to test that `Q(t, x)` does not depend on `x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_covs: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    /// Number of draws behind each entry when the tables are Monte Carlo
    /// estimates; absent for exact tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
}

impl KernelSamples {
    /// Exact tables from the forward model.
    pub fn from_model(model: &GeneratorModel, times: &[f64], probes: &[DVector<f64>]) -> Result<Self> {
        let family = TransitionKernel::new(model.clone());
        let mut means = Vec::with_capacity(times.len());
        let mut covs = Vec::with_capacity(times.len());
        for &t in times {
            let row = probes
                .iter()
                .map(|x| Ok(family.mean(t, x)?.as_slice().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            means.push(row);
            covs.push(linalg::to_rows(&family.covariance(t)?));
        }
        let samples = Self {
            dim: model.dim(),
            times: times.to_vec(),
            probes: probes.iter().map(|p| p.as_slice().to_vec()).collect(),
            means,
            covs,
            probe_covs: None,
            sample_size: None,
        };
        samples.validate()?;
        Ok(samples)
    }

    /// Tables estimated from `n` kernel draws per (time, probe). Covariances
    /// are pooled over probes in `covs` and kept per probe in `probe_covs`.
    pub fn from_model_monte_carlo(
        model: &GeneratorModel,
        times: &[f64],
        probes: &[DVector<f64>],
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::Invalid("Monte Carlo tables need at least two draws".into()));
        }
        let family = TransitionKernel::new(model.clone());
        let dim = model.dim();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        let mut probe_covs = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            let mut row = Vec::new();
            let mut per_probe = Vec::new();
            let mut pooled = DMatrix::<f64>::zeros(dim, dim);
            for (j, x) in probes.iter().enumerate() {
                let sampler = family.kernel(t, x)?.sampler()?;
                let mut r = rng::stream_rng(seed, (i * probes.len() + j) as u64);
                let draws: Vec<DVector<f64>> = (0..n).map(|_| sampler.draw(&mut r)).collect();
                let m = draws.iter().fold(DVector::zeros(dim), |acc, d| acc + d) / n as f64;
                let mut c = DMatrix::<f64>::zeros(dim, dim);
                for d in &draws {
                    let e = d - &m;
                    c += &e * e.transpose();
                }
                c /= (n - 1) as f64;
                pooled += &c;
                row.push(m.as_slice().to_vec());
                per_probe.push(linalg::to_rows(&c));
            }
            pooled /= probes.len() as f64;
            means.push(row);
            covs.push(linalg::to_rows(&pooled));
            probe_covs.push(per_probe);
        }
        let samples = Self {
            dim,
            times: times.to_vec(),
            probes: probes.iter().map(|p| p.as_slice().to_vec()).collect(),
            means,
            covs,
            probe_covs: Some(probe_covs),
            sample_size: Some(n),
        };
        samples.validate()?;
        Ok(samples)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, p) = (self.dim, self.times.len(), self.probes.len());
        if n == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if m == 0 {
            return Err(Error::Invalid("time grid is empty".into()));
        }
        if self.times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Invalid("grid times must be positive and finite".into()));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("grid times must be strictly increasing".into()));
        }
        if self.probes.iter().any(|x| x.len() != n) {
            return Err(Error::Shape(format!("every probe must have length {n}")));
        }
        if self.origin_index().is_none() {
            return Err(Error::Invalid("probe set must contain the origin".into()));
        }
        if self.means.len() != m || self.means.iter().any(|r| r.len() != p || r.iter().any(|v| v.len() != n)) {
            return Err(Error::Shape(format!("means must be {m} x {p} x {n}")));
        }
        if self.covs.len() != m || self.covs.iter().any(|c| c.len() != n || c.iter().any(|r| r.len() != n)) {
            return Err(Error::Shape(format!("covs must be {m} x {n} x {n}")));
        }
        if let Some(pc) = &self.probe_covs {
            let ok = pc.len() == m
                && pc.iter().all(|per| {
                    per.len() == p && per.iter().all(|c| c.len() == n && c.iter().all(|r| r.len() == n))
                });
            if !ok {
                return Err(Error::Shape(format!("probe_covs must be {m} x {p} x {n} x {n}")));
            }
        }
        Ok(())
    }

    pub fn origin_index(&self) -> Option<usize> {
        self.probes.iter().position(|x| x.iter().all(|&v| v == 0.0))
    }

    pub fn probe(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.probes[j])
    }

    pub fn mean(&self, i: usize, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.means[i][j])
    }

    pub fn cov(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| self.covs[i][r][c])
    }

    /// `m(t_i, 0)`.
    pub fn drift(&self, i: usize) -> DVector<f64> {
        self.mean(i, self.origin_index().expect("validated probe set contains the origin"))
    }

    /// Index of the grid time equal to `t` up to a relative `1e-9`.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * t.abs())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Origin, `±scale·e_i`, and `scale·(1, …, 1)`.
pub fn default_probes(dim: usize, scale: f64) -> Vec<DVector<f64>> {
    let mut probes = vec![DVector::zeros(dim)];
    for sign in [1.0, -1.0] {
        for i in 0..dim {
            let mut e = DVector::zeros(dim);
            e[i] = sign * scale;
            probes.push(e);
        }
    }
    if dim > 1 {
        probes.push(DVector::from_element(dim, scale));
    }
    probes
}

/// Dyadic grid `δ, 2δ, 4δ, …` up to `horizon`.
pub fn dyadic_grid(delta: f64, horizon: f64) -> Vec<f64> {
    let mut times = vec![delta];
    let mut t = 2.0 * delta;
    while t <= horizon * (1.0 + 1e-12) {
        times.push(t);
        t *= 2.0;
    }
    times
}

/// `L̂(t)` at one grid time.
#[derive(Debug, Clone)]
pub struct EvolutionEstimate {
    pub time: f64,
    pub l: DMatrix<f64>,
    /// Frobenius residual of the least-squares system.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct EvolutionGrid {
    pub entries: Vec<EvolutionEstimate>,
}

impl EvolutionGrid {
    pub fn at(&self, t: f64) -> Option<&DMatrix<f64>> {
        self.entries
            .iter()
            .find(|e| (e.time - t).abs() <= 1e-9 * t.abs())
            .map(|e| &e.l)
    }

    /// Largest `‖L̂(t_i + t_j) − L̂(t_i) L̂(t_j)‖_F` over grid pairs whose sum
    /// is on the grid; `None` when no pair qualifies.
    pub fn semigroup_residual(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for a in &self.entries {
            for b in &self.entries {
                if let Some(sum) = self.at(a.time + b.time) {
                    let r = (sum - &a.l * &b.l).norm();
                    worst = Some(worst.map_or(r, |w| w.max(r)));
                }
            }
        }
        worst
    }
}

/// Solves `L(t) x^(j) = m(t, x^(j)) − m(t, 0)` over the probes in the least
/// squares sense at every grid time.
pub fn extract_l(samples: &KernelSamples) -> Result<EvolutionGrid> {
    samples.validate()?;
    let n = samples.dim;
    let origin = samples.origin_index().expect("validated");
    let others: Vec<usize> = (0..samples.probes.len()).filter(|&j| j != origin).collect();
    let design = DMatrix::from_fn(others.len(), n, |r, c| samples.probes[others[r]][c]);
    let rank = if others.is_empty() {
        0
    } else {
        let sv = design.clone().svd(false, false).singular_values;
        let smax = sv.max();
        sv.iter().filter(|&&s| s > 1e-10 * smax).count()
    };
    if rank < n {
        return Err(Error::RankDeficient { rank, dim: n });
    }
    let entries = samples
        .times
        .iter()
        .enumerate()
        .map(|(i, &time)| {
            let base = samples.drift(i);
            let rhs = DMatrix::from_fn(others.len(), n, |r, c| samples.means[i][others[r]][c] - base[c]);
            let l_t = linalg::lstsq(&design, &rhs, DEFAULT_REL_TOL)?;
            let residual = (&design * &l_t - &rhs).norm();
            Ok(EvolutionEstimate { time, l: l_t.transpose(), residual })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvolutionGrid { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineStatus {
    Consistent,
    Violated,
    InsufficientProbes,
}

#[derive(Debug, Clone, Serialize)]
pub struct AffineReport {
    pub status: AffineStatus,
    /// Largest absolute deviation from the best affine fit `x ↦ L x + c`.
    pub residual: f64,
    pub per_time: Vec<f64>,
    pub threshold: f64,
}

/// Tests that `x ↦ m(t, x)` is affine on the probe set.
///
/// An affine fit through `dim + 1` points is always exact, so the test needs
/// redundant probes; every probe beyond that count acts as a held-out affine
/// combination of the others.
pub fn check_affine(samples: &KernelSamples, tol: f64) -> Result<AffineReport> {
    samples.validate()?;
    let n = samples.dim;
    let p = samples.probes.len();
    if p < 3 || p <= n + 1 {
        return Ok(AffineReport {
            status: AffineStatus::InsufficientProbes,
            residual: 0.0,
            per_time: Vec::new(),
            threshold: tol,
        });
    }
    let design = DMatrix::from_fn(p, n + 1, |r, c| if c < n { samples.probes[r][c] } else { 1.0 });
    let sv = design.clone().svd(false, false).singular_values;
    if sv.iter().filter(|&&s| s > 1e-10 * sv.max()).count() < n + 1 {
        return Ok(AffineReport {
            status: AffineStatus::InsufficientProbes,
            residual: 0.0,
            per_time: Vec::new(),
            threshold: tol,
        });
    }
    let mut scale = 1.0_f64;
    let mut per_time = Vec::with_capacity(samples.times.len());
    for i in 0..samples.times.len() {
        let rhs = DMatrix::from_fn(p, n, |r, c| samples.means[i][r][c]);
        scale = scale.max(linalg::max_abs(&rhs));
        let coef = linalg::lstsq(&design, &rhs, DEFAULT_REL_TOL)?;
        per_time.push(linalg::max_abs(&(&design * coef - rhs)));
    }
    let residual = per_time.iter().copied().fold(0.0, f64::max);
    let threshold = tol * scale;
    let status = if residual > threshold { AffineStatus::Violated } else { AffineStatus::Consistent };
    Ok(AffineReport { status, residual, per_time, threshold })
}

/// `A = log(L̂(δ)) / δ` with the principal logarithm.
pub fn recover_a(grid: &EvolutionGrid, delta: f64) -> Result<DMatrix<f64>> {
    let l = grid
        .at(delta)
        .ok_or_else(|| Error::Invalid(format!("no evolution estimate at t = {delta}")))?;
    Ok(linalg::logm(l)? / delta)
}

fn dyadic_pair(samples: &KernelSamples) -> Result<(usize, usize, f64)> {
    let delta = *samples
        .times
        .first()
        .ok_or_else(|| Error::MissingDyadicPair("empty grid".into()))?;
    let twice = samples
        .time_index(2.0 * delta)
        .ok_or_else(|| Error::MissingDyadicPair(format!("smallest time {delta} but no {}", 2.0 * delta)))?;
    Ok((0, twice, delta))
}

/// Small-time limit `b = lim g(s)/s` with one Richardson step.
#[derive(Debug, Clone)]
pub struct DriftEstimate {
    pub b: DVector<f64>,
    pub delta: f64,
    /// `g(δ)/δ`
    pub raw_delta: DVector<f64>,
    /// `g(2δ)/(2δ)`
    pub raw_double: DVector<f64>,
}

/// `b̂ = 2 g(δ)/δ − g(2δ)/(2δ)`, which cancels the `O(δ)` term of `g(s)/s`.
pub fn recover_b(samples: &KernelSamples) -> Result<DriftEstimate> {
    samples.validate()?;
    let (i1, i2, delta) = dyadic_pair(samples)?;
    let raw_delta = samples.drift(i1) / delta;
    let raw_double = samples.drift(i2) / (2.0 * delta);
    let b = &raw_delta * 2.0 - &raw_double;
    Ok(DriftEstimate { b, delta, raw_delta, raw_double })
}

#[derive(Debug, Clone)]
pub struct DiffusionEstimate {
    pub q: DMatrix<f64>,
    pub delta: f64,
    pub raw_delta: DMatrix<f64>,
    pub raw_double: DMatrix<f64>,
}

/// `Q̂ = 2 Q(δ)/δ − Q(2δ)/(2δ)`, symmetrized with negative eigenvalues clamped.
pub fn recover_q(samples: &KernelSamples) -> Result<DiffusionEstimate> {
    samples.validate()?;
    let (i1, i2, delta) = dyadic_pair(samples)?;
    let raw_delta = linalg::symmetrize(&samples.cov(i1)) / delta;
    let raw_double = linalg::symmetrize(&samples.cov(i2)) / (2.0 * delta);
    let q = SymSpectrum::new(&(&raw_delta * 2.0 - &raw_double))?.map(|s| s.max(0.0));
    Ok(DiffusionEstimate { q, delta, raw_delta, raw_double })
}

/// Envelope `|m(t, 0)| ≤ C e^{λ₀ t}` on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthBound {
    pub c: f64,
    pub lambda0: f64,
}

/// Least-squares fit of `log|g(t)|` against `t`, with `C` raised so the bound
/// holds at every grid point. `g ≡ 0` gives `(0, 0)`.
pub fn growth_bound(samples: &KernelSamples) -> Result<GrowthBound> {
    samples.validate()?;
    let norms: Vec<f64> = (0..samples.times.len()).map(|i| samples.drift(i).norm()).collect();
    growth_envelope(&samples.times, &norms)
}

/// [`growth_bound`] on an explicit series of `(t, |g(t)|)`.
pub fn growth_envelope(times: &[f64], norms: &[f64]) -> Result<GrowthBound> {
    if times.len() < 3 || norms.len() != times.len() {
        return Err(Error::Invalid("growth bound needs at least three grid times".into()));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(_, &g)| g > 0.0)
        .map(|(&t, &g)| (t, g.ln()))
        .collect();
    if pts.is_empty() {
        return Ok(GrowthBound { c: 0.0, lambda0: 0.0 });
    }
    let lambda0 = if pts.len() == 1 {
        0.0
    } else {
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        if sxx > 0.0 { sxy / sxx } else { 0.0 }
    };
    let c = times
        .iter()
        .zip(norms)
        .map(|(&t, &g)| g * (-lambda0 * t).exp())
        .fold(0.0, f64::max);
    Ok(GrowthBound { c, lambda0 })
}

/// Tolerances for [`identify`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IdentifyOptions {
    /// Relative threshold for the affine-mean test.
    pub affine_tol: f64,
    /// Relative threshold for the re-simulation residuals.
    pub resim_tol: f64,
    /// Relative threshold for `x`-dependence of per-probe covariances.
    pub cov_dependence_tol: f64,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self { affine_tol: 1e-8, resim_tol: 1e-4, cov_dependence_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub extract_residuals: Vec<f64>,
    pub affine: AffineReport,
    pub semigroup_residual: Option<f64>,
    /// Largest `‖Q(t_i + t_j) − Q(t_i) − L̂(t_i) Q(t_j) L̂(t_i)ᵀ‖_F` over grid pairs.
    pub covariance_flow_residual: Option<f64>,
    /// Largest relative `‖Q(t, x^(j)) − Q(t)‖_F` when per-probe tables exist.
    pub covariance_dependence: Option<f64>,
    pub drift_raw_delta: Vec<f64>,
    pub drift_raw_double: Vec<f64>,
    /// Standard errors of `b̂` for Monte Carlo tables.
    pub drift_stderr: Option<Vec<f64>>,
    /// Standard errors of `Q̂` for Monte Carlo tables.
    pub diffusion_stderr: Option<Vec<Vec<f64>>>,
    /// `resim_mean[time][probe]`: `‖m̂(t, x) − m(t, x)‖ / max(1, ‖m(t, x)‖)`.
    pub resim_mean: Vec<Vec<f64>>,
    /// `resim_cov[time]`: `‖Q̂(t) − Q(t)‖_F / max(1, ‖Q(t)‖_F)`.
    pub resim_cov: Vec<f64>,
    pub max_resim_mean: f64,
    pub max_resim_cov: f64,
    pub growth: GrowthBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifyStatus {
    Pass,
    ResidualsExceeded,
    NotGaussMarkovConsistent,
}

#[derive(Debug, Clone)]
pub struct IdentifiedModel {
    pub l_hat: EvolutionGrid,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub q_hat: DMatrix<f64>,
    pub diagnostics: Diagnostics,
    /// `false` when the tables fail the affine or `x`-independence tests.
    pub consistent: bool,
    pub status: IdentifyStatus,
}

impl IdentifiedModel {
    pub fn model(&self) -> Result<GeneratorModel> {
        GeneratorModel::new(self.a_hat.clone(), self.b_hat.clone(), self.q_hat.clone(), None)
    }

    pub fn to_report(&self) -> IdentifiedReport {
        IdentifiedReport {
            status: self.status,
            consistent: self.consistent,
            message: match self.status {
                IdentifyStatus::Pass => "identified".into(),
                IdentifyStatus::ResidualsExceeded => "re-simulation residuals exceed tolerance".into(),
                IdentifyStatus::NotGaussMarkovConsistent => "not Gauss–Markov consistent".into(),
            },
            dim: self.b_hat.len(),
            a_hat: linalg::to_rows(&self.a_hat),
            b_hat: self.b_hat.as_slice().to_vec(),
            q_hat: linalg::to_rows(&self.q_hat),
            l_hat: self
                .l_hat
                .entries
                .iter()
                .map(|e| LEntry { t: e.time, l: linalg::to_rows(&e.l) })
                .collect(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LEntry {
    pub t: f64,
    pub l: Vec<Vec<f64>>,
}

/// JSON form of an [`IdentifiedModel`].
#[derive(Debug, Clone, Serialize)]
pub struct IdentifiedReport {
    pub status: IdentifyStatus,
    pub consistent: bool,
    pub message: String,
    pub dim: usize,
    pub a_hat: Vec<Vec<f64>>,
    pub b_hat: Vec<f64>,
    pub q_hat: Vec<Vec<f64>>,
    pub l_hat: Vec<LEntry>,
    pub diagnostics: Diagnostics,
}

fn covariance_dependence(samples: &KernelSamples) -> Option<f64> {
    let pc = samples.probe_covs.as_ref()?;
    let mut worst = 0.0_f64;
    for (i, per) in pc.iter().enumerate() {
        let pooled = samples.cov(i);
        for c in per {
            let c = DMatrix::from_fn(samples.dim, samples.dim, |r, k| c[r][k]);
            worst = worst.max((c - &pooled).norm() / pooled.norm().max(f64::MIN_POSITIVE));
        }
    }
    Some(worst)
}

fn covariance_flow_residual(samples: &KernelSamples, grid: &EvolutionGrid) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for (i, &ti) in samples.times.iter().enumerate() {
        for (j, &tj) in samples.times.iter().enumerate() {
            if let Some(k) = samples.time_index(ti + tj) {
                let l = &grid.entries[i].l;
                let r = (samples.cov(k) - samples.cov(i) - l * samples.cov(j) * l.transpose()).norm();
                worst = Some(worst.map_or(r, |w| w.max(r)));
            }
        }
    }
    worst
}

/// Standard errors of the Richardson estimates when tables are sample means
/// and sample covariances of `n` draws (the two times treated as independent).
fn monte_carlo_stderr(samples: &KernelSamples, n: usize, delta: f64, i1: usize, i2: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (q1, q2) = (samples.cov(i1), samples.cov(i2));
    let nf = n as f64;
    let b = (0..samples.dim)
        .map(|k| (4.0 * q1[(k, k)] / (nf * delta * delta) + q2[(k, k)] / (nf * 4.0 * delta * delta)).sqrt())
        .collect();
    let q = (0..samples.dim)
        .map(|r| {
            (0..samples.dim)
                .map(|c| {
                    let v1 = (q1[(r, r)] * q1[(c, c)] + q1[(r, c)].powi(2)) / (nf - 1.0);
                    let v2 = (q2[(r, r)] * q2[(c, c)] + q2[(r, c)].powi(2)) / (nf - 1.0);
                    (4.0 * v1 / (delta * delta) + v2 / (4.0 * delta * delta)).sqrt()
                })
                .collect()
        })
        .collect();
    (b, q)
}

/// Runs the full inverse pipeline and re-simulates the identified triple on
/// the input grid.
pub fn identify(samples: &KernelSamples, options: &IdentifyOptions) -> Result<IdentifiedModel> {
    samples.validate()?;
    let grid = extract_l(samples)?;
    let affine = check_affine(samples, options.affine_tol)?;
    let drift = recover_b(samples)?;
    let diffusion = recover_q(samples)?;
    let a_hat = recover_a(&grid, drift.delta)?;
    let growth = growth_bound(samples)?;

    let identified = GeneratorModel::new(a_hat.clone(), drift.b.clone(), diffusion.q.clone(), None)?;
    let family = TransitionKernel::new(identified);
    let mut resim_mean = Vec::with_capacity(samples.times.len());
    let mut resim_cov = Vec::with_capacity(samples.times.len());
    for (i, &t) in samples.times.iter().enumerate() {
        let row = (0..samples.probes.len())
            .map(|j| {
                let observed = samples.mean(i, j);
                let predicted = family.mean(t, &samples.probe(j))?;
                Ok((predicted - &observed).norm() / observed.norm().max(1.0))
            })
            .collect::<Result<Vec<_>>>()?;
        resim_mean.push(row);
        let observed = samples.cov(i);
        resim_cov.push((family.covariance(t)? - &observed).norm() / observed.norm().max(1.0));
    }
    let max_resim_mean = resim_mean.iter().flatten().copied().fold(0.0, f64::max);
    let max_resim_cov = resim_cov.iter().copied().fold(0.0, f64::max);

    let cov_dep = covariance_dependence(samples);
    let (drift_stderr, diffusion_stderr) = match samples.sample_size {
        Some(n) => {
            let (_, i2, delta) = dyadic_pair(samples)?;
            let (b, q) = monte_carlo_stderr(samples, n, delta, 0, i2);
            (Some(b), Some(q))
        }
        None => (None, None),
    };
    let consistent = affine.status != AffineStatus::Violated
        && cov_dep.is_none_or(|d| d <= options.cov_dependence_tol);
    let status = if !consistent {
        IdentifyStatus::NotGaussMarkovConsistent
    } else if max_resim_mean > options.resim_tol || max_resim_cov > options.resim_tol {
        IdentifyStatus::ResidualsExceeded
    } else {
        IdentifyStatus::Pass
    };

    let diagnostics = Diagnostics {
        extract_residuals: grid.entries.iter().map(|e| e.residual).collect(),
        affine,
        semigroup_residual: grid.semigroup_residual(),
        covariance_flow_residual: covariance_flow_residual(samples, &grid),
        covariance_dependence: cov_dep,
        drift_raw_delta: drift.raw_delta.as_slice().to_vec(),
        drift_raw_double: drift.raw_double.as_slice().to_vec(),
        drift_stderr,
        diffusion_stderr,
        resim_mean,
        resim_cov,
        max_resim_mean,
        max_resim_cov,
        growth,
    };
    Ok(IdentifiedModel {
        l_hat: grid,
        a_hat,
        b_hat: drift.b,
        q_hat: diffusion.q,
        diagnostics,
        consistent,
        status,
    })
}

/// Gaussian conditioning on the two-time joint law of `(Z(s), Z(t))` started
/// at `x`: the law of `Z(t)` given `Z(s) = y`.
pub fn two_time_conditional(
    family: &TransitionKernel,
    s: f64,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<GaussianMeasure> {
    let joint = gaussian::JointGaussian::new(
        family.mean(s, x)?,
        family.mean(t, x)?,
        family.covariance(s)?,
        family.covariance(t)?,
        family.cross_covariance(s, t)?.transpose(),
    )?;
    gaussian::conditional(&joint, y, DEFAULT_REL_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn reference() -> GeneratorModel {
        GeneratorModel::scalar(-1.0, 1.0, 2.0, Some(1.0)).unwrap()
    }

    fn scalar_probes() -> Vec<DVector<f64>> {
        [0.0, 1.0, -1.0, 2.0].iter().map(|&v| DVector::from_element(1, v)).collect()
    }

    #[test]
    fn extract_scalar() {
        let s = KernelSamples::from_model(&reference(), &[0.5, 1.0], &scalar_probes()).unwrap();
        let g = extract_l(&s).unwrap();
        assert_abs_diff_eq!(g.at(1.0).unwrap()[(0, 0)], (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn extract_identity_dynamics() {
        let m = GeneratorModel::new(DMatrix::zeros(2, 2), DVector::zeros(2), DMatrix::identity(2, 2), None).unwrap();
        let s = KernelSamples::from_model(&m, &[0.1, 1.0, 3.0], &default_probes(2, 1.0)).unwrap();
        for e in extract_l(&s).unwrap().entries {
            assert!((e.l - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
        }
    }

    #[test]
    fn extract_rejects_collinear_probes() {
        let m = GeneratorModel::new(DMatrix::zeros(2, 2), DVector::zeros(2), DMatrix::identity(2, 2), None).unwrap();
        let x = DVector::from_column_slice(&[1.0, 1.0]);
        let probes = vec![DVector::zeros(2), x.clone(), x * 2.0];
        let s = KernelSamples::from_model(&m, &[1.0], &probes).unwrap();
        assert!(matches!(extract_l(&s), Err(Error::RankDeficient { rank: 1, dim: 2 })));
    }

    #[test]
    fn affine_forward_and_planted() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -0.8]);
        let m = GeneratorModel::new(a, DVector::from_column_slice(&[0.2, 1.0]), DMatrix::identity(2, 2), None).unwrap();
        let mut s = KernelSamples::from_model(&m, &[0.5, 1.0], &default_probes(2, 1.0)).unwrap();
        let r = check_affine(&s, 1e-8).unwrap();
        assert_eq!(r.status, AffineStatus::Consistent);
        assert!(r.residual < 1e-12);
        for i in 0..s.times.len() {
            for j in 0..s.probes.len() {
                let sq: f64 = s.probes[j].iter().map(|v| v * v).sum();
                s.means[i][j][0] += 0.1 * sq;
            }
        }
        let r = check_affine(&s, 1e-8).unwrap();
        assert_eq!(r.status, AffineStatus::Violated);
        assert!(r.residual > 0.01);
    }

    #[test]
    fn affine_needs_redundant_probes() {
        let probes = vec![DVector::zeros(1), DVector::from_element(1, 1.0)];
        let s = KernelSamples::from_model(&reference(), &[1.0], &probes).unwrap();
        assert_eq!(check_affine(&s, 1e-8).unwrap().status, AffineStatus::InsufficientProbes);
    }

    #[test]
    fn recover_a_cases() {
        let id = EvolutionGrid {
            entries: vec![EvolutionEstimate { time: 0.5, l: DMatrix::identity(2, 2), residual: 0.0 }],
        };
        assert_eq!(recover_a(&id, 0.5).unwrap(), DMatrix::zeros(2, 2));
        let scalar = EvolutionGrid {
            entries: vec![EvolutionEstimate { time: 1.0, l: DMatrix::from_element(1, 1, (-1.0f64).exp()), residual: 0.0 }],
        };
        assert_abs_diff_eq!(recover_a(&scalar, 1.0).unwrap()[(0, 0)], -1.0, epsilon = 1e-15);
        let skew = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let rot = EvolutionGrid {
            entries: vec![EvolutionEstimate { time: 0.1, l: (&skew * 0.1).exp(), residual: 0.0 }],
        };
        assert!((recover_a(&rot, 0.1).unwrap() - skew).norm() < 1e-10);
        let flip = EvolutionGrid {
            entries: vec![EvolutionEstimate { time: 1.0, l: DMatrix::from_element(1, 1, -0.5), residual: 0.0 }],
        };
        assert!(matches!(recover_a(&flip, 1.0), Err(Error::LogBranch { .. })));
    }

    #[test]
    fn recover_b_and_q_scalar() {
        let s = KernelSamples::from_model(&reference(), &[0.01, 0.02, 1.0], &scalar_probes()).unwrap();
        let b = recover_b(&s).unwrap();
        assert_abs_diff_eq!(b.b[0], 1.0, epsilon = 1e-4);
        assert!((b.raw_delta[0] - 1.0).abs() > (b.b[0] - 1.0).abs());
        let q = recover_q(&s).unwrap();
        assert_abs_diff_eq!(q.q[(0, 0)], 2.0, epsilon = 1e-3);
    }

    #[test]
    fn recover_zero_drift_and_noise() {
        let m = GeneratorModel::scalar(-0.5, 0.0, 0.0, None).unwrap();
        let s = KernelSamples::from_model(&m, &[0.01, 0.02], &scalar_probes()).unwrap();
        assert_eq!(recover_b(&s).unwrap().b[0], 0.0);
        assert_eq!(recover_q(&s).unwrap().q[(0, 0)], 0.0);
        assert_eq!(growth_bound(&KernelSamples::from_model(&m, &[1.0, 2.0, 3.0], &scalar_probes()).unwrap()).unwrap(),
            GrowthBound { c: 0.0, lambda0: 0.0 });
    }

    #[test]
    fn recover_needs_dyadic_pair() {
        let s = KernelSamples::from_model(&reference(), &[0.01, 0.03], &scalar_probes()).unwrap();
        assert!(matches!(recover_b(&s), Err(Error::MissingDyadicPair(_))));
        assert!(matches!(recover_q(&s), Err(Error::MissingDyadicPair(_))));
    }

    #[test]
    fn growth_bound_unstable_and_stable() {
        let unstable = GeneratorModel::scalar(1.0, 1.0, 1.0, None).unwrap();
        let times: Vec<f64> = (1..=10).map(f64::from).collect();
        let s = KernelSamples::from_model(&unstable, &times, &scalar_probes()).unwrap();
        let g = growth_bound(&s).unwrap();
        assert!((g.lambda0 - 1.0).abs() < 0.05, "{g:?}");
        for (i, &t) in times.iter().enumerate() {
            assert!(s.drift(i).norm() <= g.c * (g.lambda0 * t).exp() * (1.0 + 1e-12));
        }
        let times: Vec<f64> = (2..=20).map(f64::from).collect();
        let s = KernelSamples::from_model(&reference(), &times, &scalar_probes()).unwrap();
        assert!(growth_bound(&s).unwrap().lambda0 <= 0.01);
    }

    #[test]
    fn brownian_motion_recovered_exactly() {
        let m = GeneratorModel::new(DMatrix::zeros(2, 2), DVector::zeros(2), DMatrix::identity(2, 2), None).unwrap();
        for delta in [1e-3, 0.5] {
            let s = KernelSamples::from_model(&m, &dyadic_grid(delta, 2.0), &default_probes(2, 1.0)).unwrap();
            let id = identify(&s, &IdentifyOptions::default()).unwrap();
            assert!(id.a_hat.norm() < 1e-12);
            assert!(id.b_hat.norm() < 1e-12);
            assert!((&id.q_hat - DMatrix::<f64>::identity(2, 2)).norm() < 1e-9);
            assert_eq!(id.status, IdentifyStatus::Pass);
        }
    }

    #[test]
    fn x_dependent_covariance_flagged() {
        let mut s = KernelSamples::from_model(&reference(), &dyadic_grid(1e-3, 1.0), &scalar_probes()).unwrap();
        let pc = s
            .covs
            .iter()
            .map(|c| (0..s.probes.len()).map(|j| vec![vec![c[0][0] * (1.0 + 0.05 * j as f64)]]).collect())
            .collect();
        s.probe_covs = Some(pc);
        let id = identify(&s, &IdentifyOptions::default()).unwrap();
        assert!(!id.consistent);
        assert_eq!(id.status, IdentifyStatus::NotGaussMarkovConsistent);
    }

    #[test]
    fn validation_errors() {
        let mut s = KernelSamples::from_model(&reference(), &[0.5, 1.0], &scalar_probes()).unwrap();
        s.times = vec![1.0, 0.5];
        assert!(s.validate().is_err());
        let no_origin = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)];
        assert!(KernelSamples::from_model(&reference(), &[1.0], &no_origin).is_err());
        assert!(KernelSamples::from_model(&reference(), &[], &scalar_probes()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = KernelSamples::from_model(&reference(), &[0.001, 0.002, 1.0], &scalar_probes()).unwrap();
        let back = KernelSamples::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
