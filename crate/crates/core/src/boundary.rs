//! Heat equation on the half line with white-noise Dirichlet data:
//! `∂ₜu = ∂²_ξ u`, `u(t, 0) = Ẇ(t)`, `u(0, ·) = x`.
//!
//! The mild solution is `u(t, ξ) = ∫ G(t, ξ, η) x(η) dη + ∫₀ᵗ K(t − s, ξ) dW(s)`
//! with the Dirichlet heat kernel `G` and its boundary flux
//! `K(t, ξ) = ∂G/∂η (t, ξ, 0)`. Fields live in `H = L²(ρ(ξ) dξ)` with
//! `ρ(ξ) = min(1, ξ^{1+α})`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SymSpectrum, EPS_PSD};
use crate::model::GeneratorModel;
use crate::quadrature::{self, Rule};
use crate::rng;

/// Absolute tolerance of [`covariance_q`].
pub const Q_ABS_TOL: f64 = 1e-10;

/// Layout of a [`HalfLineGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub xi_max: f64,
    pub alpha: f64,
    /// Panels `[2^{-j-1}, 2^{-j}]` for `j < geometric_levels`, plus `[0, 2^{-L}]`.
    pub geometric_levels: usize,
    /// Width of the uniform panels covering `[1, xi_max]`.
    pub panel_width: f64,
    /// Gauss–Legendre nodes per panel.
    pub order: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { xi_max: 20.0, alpha: 0.5, geometric_levels: 12, panel_width: 0.25, order: 8 }
    }
}

/// Composite Gauss–Legendre discretisation of `(0, xi_max]`.
#[derive(Debug, Clone, Serialize)]
pub struct HalfLineGrid {
    pub config: GridConfig,
    pub nodes: Vec<f64>,
    /// Weights for `∫ · ρ(ξ) dξ`.
    pub weights: Vec<f64>,
    /// Weights for `∫ · dξ`.
    pub lebesgue: Vec<f64>,
    pub rho: Vec<f64>,
}

pub fn rho(xi: f64, alpha: f64) -> f64 {
    xi.powf(1.0 + alpha).min(1.0)
}

impl HalfLineGrid {
    pub fn new(config: GridConfig) -> Result<Self> {
        let c = config;
        if !(c.xi_max > 1.0 && c.xi_max.is_finite()) {
            return Err(Error::Invalid(format!("xi_max must exceed 1, got {}", c.xi_max)));
        }
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {}", c.alpha)));
        }
        if !(c.panel_width > 0.0) || c.order == 0 {
            return Err(Error::Invalid("panel width and order must be positive".into()));
        }
        let mut edges = vec![0.0];
        for j in (0..c.geometric_levels).rev() {
            edges.push(0.5f64.powi(j as i32 + 1));
        }
        edges.push(1.0);
        let uniform = ((c.xi_max - 1.0) / c.panel_width).ceil() as usize;
        for k in 1..=uniform {
            edges.push(1.0 + (c.xi_max - 1.0) * k as f64 / uniform as f64);
        }
        let rule = quadrature::gauss_legendre(c.order);
        let mut nodes = Vec::new();
        let mut lebesgue = Vec::new();
        for w in edges.windows(2) {
            push_panel(&rule, w[0], w[1], &mut nodes, &mut lebesgue);
        }
        let rho: Vec<f64> = nodes.iter().map(|&x| rho(x, c.alpha)).collect();
        let weights = lebesgue.iter().zip(&rho).map(|(w, r)| w * r).collect();
        Ok(Self { config: c, nodes, weights, lebesgue, rho })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn xi_max(&self) -> f64 {
        self.config.xi_max
    }
}

fn push_panel(rule: &Rule, a: f64, b: f64, nodes: &mut Vec<f64>, weights: &mut Vec<f64>) {
    let half = 0.5 * (b - a);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        nodes.push(a + half * (x + 1.0));
        weights.push(half * w);
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::NonPositiveTime(t));
    }
    Ok(())
}

/// `G(t, ξ, η) = (4πt)^{-1/2} (e^{−(ξ−η)²/4t} − e^{−(ξ+η)²/4t})`.
pub fn heat_kernel(t: f64, xi: f64, eta: f64) -> Result<f64> {
    check_time(t)?;
    if xi < 0.0 || eta < 0.0 {
        return Err(Error::Invalid("heat kernel needs ξ, η ≥ 0".into()));
    }
    Ok(green(t, xi, eta))
}

fn green(t: f64, xi: f64, eta: f64) -> f64 {
    // e^{−(ξ−η)²/4t}(1 − e^{−ξη/t}) avoids cancellation when ξη ≪ t
    let near = (-(xi - eta).powi(2) / (4.0 * t)).exp();
    near * -(-xi * eta / t).exp_m1() / (4.0 * PI * t).sqrt()
}

/// `∂G/∂η (t, ξ, 0) = ξ / (2√π t^{3/2}) · e^{−ξ²/4t}`.
pub fn kernel_normal_derivative(t: f64, xi: f64) -> Result<f64> {
    check_time(t)?;
    if xi < 0.0 {
        return Err(Error::Invalid("ξ must be nonnegative".into()));
    }
    Ok(flux(t, xi))
}

fn flux(t: f64, xi: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    xi / (2.0 * PI.sqrt() * t.powf(1.5)) * (-xi * xi / (4.0 * t)).exp()
}

fn check_profile(grid: &HalfLineGrid, x: &[f64]) -> Result<()> {
    if x.len() != grid.len() {
        return Err(Error::Shape(format!("profile has {} values, grid has {} nodes", x.len(), grid.len())));
    }
    Ok(())
}

/// `∫ G(t, ξ, η) x(η) dη` at each grid node, by the grid's Lebesgue rule.
pub fn deterministic_part(grid: &HalfLineGrid, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    deterministic_part_at(grid, t, x, &grid.nodes)
}

/// [`deterministic_part`] at arbitrary points.
pub fn deterministic_part_at(grid: &HalfLineGrid, t: f64, x: &[f64], points: &[f64]) -> Result<Vec<f64>> {
    check_time(t)?;
    check_profile(grid, x)?;
    Ok(points
        .iter()
        .map(|&p| {
            grid.nodes
                .iter()
                .zip(&grid.lebesgue)
                .zip(x)
                .map(|((&eta, &w), &xv)| if xv == 0.0 { 0.0 } else { green(t, p, eta) * w * xv })
                .sum()
        })
        .collect())
}

/// `q(t, ξ, η) = ∫₀ᵗ K(s, ξ) K(s, η) ds` by adaptive Gauss–Kronrod.
pub fn covariance_q(t: f64, xi: f64, eta: f64) -> Result<f64> {
    check_time(t)?;
    if xi < 0.0 || eta < 0.0 {
        return Err(Error::Invalid("q needs ξ, η ≥ 0".into()));
    }
    if xi == 0.0 || eta == 0.0 {
        return Ok(0.0);
    }
    Ok(quadrature::integrate_adaptive(|s| flux(s, xi) * flux(s, eta), 0.0, t, Q_ABS_TOL, 1e-13).value)
}

/// `q(t, ξ, η)` by the composite trapezoid rule with `panels` panels.
pub fn covariance_q_trapezoid(t: f64, xi: f64, eta: f64, panels: usize) -> Result<f64> {
    check_time(t)?;
    if xi < 0.0 || eta < 0.0 {
        return Err(Error::Invalid("q needs ξ, η ≥ 0".into()));
    }
    Ok(quadrature::trapezoid(|s| flux(s, xi) * flux(s, eta), 0.0, t, panels))
}

/// `Σ_j v_j² ρ(ξ_j) w_j`, the discretised `|v|²_H`.
pub fn weighted_norm_sq(grid: &HalfLineGrid, values: &[f64]) -> Result<f64> {
    check_profile(grid, values)?;
    Ok(values.iter().zip(&grid.weights).map(|(v, w)| v * v * w).sum())
}

/// `E|u(t)|²_H = Σ_j q(t, ξ_j, ξ_j) ρ(ξ_j) w_j` for the noise part.
pub fn expected_weighted_norm_sq(grid: &HalfLineGrid, t: f64) -> Result<f64> {
    check_time(t)?;
    grid.nodes
        .iter()
        .zip(&grid.weights)
        .map(|(&xi, &w)| Ok(covariance_q(t, xi, xi)? * w))
        .sum()
}

/// `Da(ξ) = a e^{−ξ√λ}`, solving `(λ − ∂²)φ = 0`, `φ(0) = a`.
pub fn dirichlet_map(a: f64, lambda: f64, xi: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Invalid(format!("λ must be positive, got {lambda}")));
    }
    Ok(a * (-xi * lambda.sqrt()).exp())
}

/// `√(2/Ξ) sin(kπξ/Ξ)`, `k ≥ 1`.
pub fn sine_mode(k: usize, xi_max: f64, xi: f64) -> f64 {
    (2.0 / xi_max).sqrt() * (k as f64 * PI * xi / xi_max).sin()
}

/// `(kπ/Ξ)²`
pub fn mode_rate(k: usize, xi_max: f64) -> f64 {
    (k as f64 * PI / xi_max).powi(2)
}

/// Galerkin model in the first `n_modes` sine modes of `[0, Ξ]`:
/// `A = diag(−(kπ/Ξ)²)`, `b_V = 0`, `Q_diff = c cᵀ` with
/// `c = (λ − A)·(projection of D1)`. Projections use the grid's Lebesgue rule.
pub fn galerkin_project(grid: &HalfLineGrid, n_modes: usize, lambda: f64) -> Result<GeneratorModel> {
    if n_modes == 0 || n_modes * 4 > grid.len() {
        return Err(Error::Invalid(format!(
            "n_modes must be between 1 and {} for this grid",
            grid.len() / 4
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::Invalid(format!("λ must be positive, got {lambda}")));
    }
    let xm = grid.xi_max();
    let mut a = DMatrix::zeros(n_modes, n_modes);
    let mut c = DVector::zeros(n_modes);
    for k in 0..n_modes {
        let mu = mode_rate(k + 1, xm);
        a[(k, k)] = -mu;
        let d: f64 = grid
            .nodes
            .iter()
            .zip(&grid.lebesgue)
            .map(|(&xi, &w)| (-xi * lambda.sqrt()).exp() * sine_mode(k + 1, xm, xi) * w)
            .sum();
        c[k] = (lambda + mu) * d;
    }
    GeneratorModel::new(a, DVector::zeros(n_modes), &c * c.transpose(), Some(lambda))
}

/// `∫∫ q(t, ξ, η) f(ξ) g(η) dξ dη` over the grid, evaluated in the order
/// `∫₀ᵗ (Σ_i K(s, ξ_i) f_i w_i)(Σ_j K(s, ξ_j) g_j w_j) ds`.
pub fn q_projection(grid: &HalfLineGrid, t: f64, f: &[f64], g: &[f64]) -> Result<f64> {
    check_time(t)?;
    check_profile(grid, f)?;
    check_profile(grid, g)?;
    let flux_integral = |s: f64, v: &[f64]| -> f64 {
        grid.nodes.iter().zip(&grid.lebesgue).zip(v).map(|((&xi, &w), &vi)| flux(s, xi) * w * vi).sum()
    };
    // The flux of small nodes peaks at s ≈ ξ²/6; splitting at those scales
    // keeps the adaptive rule from missing the spikes.
    let mut breaks = vec![0.0];
    let mut s = grid.nodes[0] * grid.nodes[0] / 6.0;
    while s < t {
        breaks.push(s);
        s *= 4.0;
    }
    breaks.push(t);
    Ok(breaks
        .windows(2)
        .map(|w| quadrature::integrate_adaptive(|s| flux_integral(s, f) * flux_integral(s, g), w[0], w[1], 1e-12, 1e-10).value)
        .sum())
}

/// Galerkin covariance against the `q`-projection for modes `1..=n_modes`.
#[derive(Debug, Clone, Serialize)]
pub struct ModeComparison {
    pub t: f64,
    pub n_modes: usize,
    /// `⟨Q(t)φ_k, φ_l⟩` of the Galerkin model.
    pub galerkin: Vec<Vec<f64>>,
    /// `∫∫ q(t, ξ, η) φ_k(ξ) φ_l(η)`.
    pub q_projection: Vec<Vec<f64>>,
    /// Relative error of the diagonal.
    pub diagonal_rel_error: Vec<f64>,
    pub max_diagonal_rel_error: f64,
}

pub fn compare_modes(grid: &HalfLineGrid, n_modes: usize, lambda: f64, t: f64) -> Result<ModeComparison> {
    let model = galerkin_project(grid, n_modes, lambda)?;
    let q = crate::semigroup::covariance(&model, t)?;
    let modes = mode_table(grid, n_modes);
    let mut qp = vec![vec![0.0; n_modes]; n_modes];
    for k in 0..n_modes {
        for l in k..n_modes {
            let v = q_projection(grid, t, &modes[k], &modes[l])?;
            qp[k][l] = v;
            qp[l][k] = v;
        }
    }
    let diagonal_rel_error: Vec<f64> = (0..n_modes).map(|k| (q[(k, k)] - qp[k][k]).abs() / qp[k][k].abs()).collect();
    Ok(ModeComparison {
        t,
        n_modes,
        galerkin: crate::linalg::to_rows(&q),
        q_projection: qp,
        max_diagonal_rel_error: diagonal_rel_error.iter().copied().fold(0.0, f64::max),
        diagonal_rel_error,
    })
}

/// `φ_k(ξ_j)` for `k = 1..=n_modes`.
pub fn mode_table(grid: &HalfLineGrid, n_modes: usize) -> Vec<Vec<f64>> {
    (1..=n_modes).map(|k| grid.nodes.iter().map(|&xi| sine_mode(k, grid.xi_max(), xi)).collect()).collect()
}

/// Smallest eigenvalue of `[q(t, ξ_i, ξ_j)]` relative to the largest.
pub fn q_gram_min_relative_eigenvalue(t: f64, points: &[f64]) -> Result<f64> {
    let n = points.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = covariance_q(t, points[i], points[j])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let spec = SymSpectrum::new(&g)?;
    Ok(spec.min_value() / spec.max_abs_value().max(f64::MIN_POSITIVE))
}

/// Whether a `q`-Gram matrix is PSD within [`EPS_PSD`].
pub fn q_gram_is_psd(t: f64, points: &[f64]) -> Result<bool> {
    Ok(q_gram_min_relative_eigenvalue(t, points)? >= -EPS_PSD)
}

/// One sampled field `u(t, ·)`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryField {
    pub time: f64,
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub replica: u64,
}

/// Precomputed stochastic-convolution weights for one `(grid, t, n_steps)`.
///
/// Increments `ΔW_k ~ N(0, Δs)` on `s_k = kΔs` are weighted by
/// `K(t − s_k, ξ)`, except on the final cell where the weight is
/// `(∫_cell K² ds / Δs)^{1/2}`, so each point's variance from that cell is
/// exact.
#[derive(Debug, Clone)]
pub struct BoundarySimulator {
    grid: HalfLineGrid,
    time: f64,
    points: Vec<f64>,
    /// `points × n_steps`
    noise: DMatrix<f64>,
    /// `points × nodes`: `G(t, p, η_i) w_i`
    transport: DMatrix<f64>,
    dt: f64,
}

impl BoundarySimulator {
    /// Field at the grid nodes.
    pub fn new(grid: &HalfLineGrid, t: f64, n_steps: usize) -> Result<Self> {
        Self::at_points(grid, t, n_steps, grid.nodes.clone())
    }

    pub fn at_points(grid: &HalfLineGrid, t: f64, n_steps: usize, points: Vec<f64>) -> Result<Self> {
        check_time(t)?;
        if n_steps == 0 {
            return Err(Error::Invalid("n_steps must be at least 1".into()));
        }
        if points.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Invalid("evaluation points must be positive".into()));
        }
        let dt = t / n_steps as f64;
        let mut noise = DMatrix::zeros(points.len(), n_steps);
        for (i, &p) in points.iter().enumerate() {
            for k in 0..n_steps - 1 {
                noise[(i, k)] = flux(t - k as f64 * dt, p);
            }
            let last = quadrature::integrate_adaptive(|s| flux(s, p).powi(2), 0.0, dt, 1e-14, 1e-12).value;
            noise[(i, n_steps - 1)] = (last / dt).sqrt();
        }
        let transport = DMatrix::from_fn(points.len(), grid.len(), |i, j| green(t, points[i], grid.nodes[j]) * grid.lebesgue[j]);
        Ok(Self { grid: grid.clone(), time: t, points, noise, transport, dt })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn deterministic(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_profile(&self.grid, x)?;
        Ok(&self.transport * DVector::from_column_slice(x))
    }

    /// Replica `replica` of the noise part, from stream `replica` under `seed`.
    pub fn noise_sample(&self, seed: u64, replica: u64) -> DVector<f64> {
        let mut r = rng::stream_rng(seed, replica);
        let dw = rng::standard_normal_vector(&mut r, self.noise.ncols()) * self.dt.sqrt();
        &self.noise * dw
    }

    pub fn field(&self, x: &[f64], seed: u64, replica: u64, with_noise: bool) -> Result<BoundaryField> {
        let mut values = self.deterministic(x)?;
        if with_noise {
            values += self.noise_sample(seed, replica);
        }
        Ok(BoundaryField {
            time: self.time,
            points: self.points.clone(),
            values: values.as_slice().to_vec(),
            seed,
            replica,
        })
    }
}

/// One replica of `u(t, ·)` at the grid nodes.
pub fn simulate_boundary_field(grid: &HalfLineGrid, t: f64, x: &[f64], n_time_steps: usize, seed: u64, with_noise: bool) -> Result<BoundaryField> {
    BoundarySimulator::new(grid, t, n_time_steps)?.field(x, seed, 0, with_noise)
}

/// Per-point sample moments of the noise part over replicas.
#[derive(Debug, Clone, Serialize)]
pub struct FieldMoments {
    pub time: f64,
    pub points: Vec<f64>,
    pub n_replicas: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub var_stderr: Vec<f64>,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    /// Mean over replicas of `Σ_j u_j² ρ_j w_j`; only set when the points are
    /// the grid nodes.
    pub weighted_norm_sq: Option<f64>,
    pub weighted_norm_sq_stderr: Option<f64>,
}

/// Moments of the noise part over `n_replicas` replicas (streams
/// `0..n_replicas` under `seed`).
pub fn noise_moments(sim: &BoundarySimulator, n_replicas: usize, seed: u64) -> Result<FieldMoments> {
    if n_replicas < 2 {
        return Err(Error::Invalid("moments need at least two replicas".into()));
    }
    let on_grid = sim.points == sim.grid.nodes;
    let np = sim.points.len();
    const BLOCK: usize = 256;
    let blocks: Vec<(Vec<[f64; 4]>, f64, f64)> = (0..n_replicas.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut sums = vec![[0.0; 4]; np];
            let (mut nsum, mut nsq) = (0.0, 0.0);
            for i in (b * BLOCK)..((b + 1) * BLOCK).min(n_replicas) {
                let u = sim.noise_sample(seed, i as u64);
                for (s, v) in sums.iter_mut().zip(u.iter()) {
                    let v2 = v * v;
                    s[0] += v;
                    s[1] += v2;
                    s[2] += v2 * v;
                    s[3] += v2 * v2;
                }
                if on_grid {
                    let h: f64 = u.iter().zip(&sim.grid.weights).map(|(v, w)| v * v * w).sum();
                    nsum += h;
                    nsq += h * h;
                }
            }
            (sums, nsum, nsq)
        })
        .collect();
    let mut sums = vec![[0.0; 4]; np];
    let (mut nsum, mut nsq) = (0.0, 0.0);
    for (s, a, b) in &blocks {
        for (t, v) in sums.iter_mut().zip(s) {
            for k in 0..4 {
                t[k] += v[k];
            }
        }
        nsum += a;
        nsq += b;
    }
    let n = n_replicas as f64;
    let mut out = FieldMoments {
        time: sim.time,
        points: sim.points.clone(),
        n_replicas,
        mean: Vec::with_capacity(np),
        var: Vec::with_capacity(np),
        var_stderr: Vec::with_capacity(np),
        skewness: Vec::with_capacity(np),
        excess_kurtosis: Vec::with_capacity(np),
        weighted_norm_sq: None,
        weighted_norm_sq_stderr: None,
    };
    for s in &sums {
        let m = s[0] / n;
        let r2 = s[1] / n;
        let r3 = s[2] / n;
        let r4 = s[3] / n;
        let c2 = r2 - m * m;
        let c3 = r3 - 3.0 * m * r2 + 2.0 * m.powi(3);
        let c4 = r4 - 4.0 * m * r3 + 6.0 * m * m * r2 - 3.0 * m.powi(4);
        out.mean.push(m);
        out.var.push(c2 * n / (n - 1.0));
        out.var_stderr.push(((c4 - c2 * c2).max(0.0) / n).sqrt());
        out.skewness.push(if c2 > 0.0 { c3 / c2.powf(1.5) } else { 0.0 });
        out.excess_kurtosis.push(if c2 > 0.0 { c4 / (c2 * c2) - 3.0 } else { 0.0 });
    }
    if on_grid {
        let m = nsum / n;
        out.weighted_norm_sq = Some(m);
        out.weighted_norm_sq_stderr = Some(((nsq / n - m * m).max(0.0) / (n - 1.0)).sqrt());
    }
    Ok(out)
}

/// Sample covariance of the sine-mode coefficients `∫ u φ_k dξ` of the noise
/// part, with the standard error of each entry.
#[derive(Debug, Clone, Serialize)]
pub struct ModeMoments {
    pub n_replicas: usize,
    pub cov: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
}

pub fn noise_mode_moments(sim: &BoundarySimulator, n_modes: usize, n_replicas: usize, seed: u64) -> Result<ModeMoments> {
    if sim.points != sim.grid.nodes {
        return Err(Error::Invalid("mode projections need the field at the grid nodes".into()));
    }
    if n_replicas < 2 {
        return Err(Error::Invalid("moments need at least two replicas".into()));
    }
    let table = mode_table(&sim.grid, n_modes);
    let proj = DMatrix::from_fn(n_modes, sim.grid.len(), |k, j| table[k][j] * sim.grid.lebesgue[j]);
    let coeffs: Vec<DVector<f64>> = (0..n_replicas as u64).into_par_iter().map(|i| &proj * sim.noise_sample(seed, i)).collect();
    let n = n_replicas as f64;
    let mean = coeffs.iter().fold(DVector::zeros(n_modes), |a, c| a + c) / n;
    let mut cov = vec![vec![0.0; n_modes]; n_modes];
    let mut stderr = vec![vec![0.0; n_modes]; n_modes];
    for k in 0..n_modes {
        for l in 0..n_modes {
            let prods: Vec<f64> = coeffs.iter().map(|c| (c[k] - mean[k]) * (c[l] - mean[l])).collect();
            let m = prods.iter().sum::<f64>() / n;
            let v = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1.0);
            cov[k][l] = m * n / (n - 1.0);
            stderr[k][l] = (v / n).sqrt();
        }
    }
    Ok(ModeMoments { n_replicas, cov, stderr })
}

/// CSV `replica,t,xi,u`.
pub fn write_fields_csv<W: Write>(mut out: W, fields: &[BoundaryField]) -> Result<()> {
    writeln!(out, "replica,t,xi,u")?;
    for f in fields {
        for (xi, u) in f.points.iter().zip(&f.values) {
            writeln!(out, "{},{},{},{}", f.replica, f.time, xi, u)?;
        }
    }
    Ok(())
}

/// CSV `t,xi,eta,q` over all pairs of `points` at each time.
pub fn write_q_table_csv<W: Write>(mut out: W, times: &[f64], points: &[f64]) -> Result<()> {
    writeln!(out, "t,xi,eta,q")?;
    for &t in times {
        for &xi in points {
            for &eta in points {
                writeln!(out, "{},{},{},{}", t, xi, eta, covariance_q(t, xi, eta)?)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn q_closed(t: f64, xi: f64, eta: f64) -> f64 {
        let s = xi * xi + eta * eta;
        let c = s / 4.0;
        4.0 * xi * eta / (PI * s * s) * (1.0 + c / t) * (-c / t).exp()
    }

    #[test]
    fn heat_kernel_values() {
        assert_eq!(heat_kernel(1.0, 0.0, 2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            heat_kernel(1.0, 1.0, 1.0).unwrap(),
            (1.0 - (-1.0f64).exp()) / (4.0 * PI).sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(heat_kernel(1.0, 1.0, 1.0).unwrap(), 0.178318, epsilon = 1e-6);
        assert_eq!(heat_kernel(0.3, 0.2, 1.7).unwrap(), heat_kernel(0.3, 1.7, 0.2).unwrap());
        assert!(heat_kernel(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn flux_values() {
        assert_abs_diff_eq!(kernel_normal_derivative(1.0, 2.0).unwrap(), (-1.0f64).exp() / PI.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(kernel_normal_derivative(1.0, 2.0).unwrap(), 0.207554, epsilon = 1e-6);
        assert_eq!(kernel_normal_derivative(1.0, 0.0).unwrap(), 0.0);
        assert!(kernel_normal_derivative(-1.0, 1.0).is_err());
        // the formula for G is odd in η, so a central difference straddles 0
        let h = 1e-4;
        let fd = (green(1.0, 1.0, h) - green(1.0, 1.0, -h)) / (2.0 * h);
        assert!((fd - kernel_normal_derivative(1.0, 1.0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn q_matches_closed_form() {
        for &(t, a, b) in &[(1.0, 1.0, 1.0), (0.5, 0.3, 2.0), (2.0, 0.05, 0.05)] {
            let q = covariance_q(t, a, b).unwrap();
            assert!((q - q_closed(t, a, b)).abs() <= 1e-10 + 1e-10 * q, "{t} {a} {b}: {q}");
        }
        assert_abs_diff_eq!(covariance_q(1.0, 1.0, 1.0).unwrap(), 1.5 * (-0.5f64).exp() / PI, epsilon = 1e-10);
        assert_eq!(covariance_q(1.0, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn grid_weight_integral() {
        let g = HalfLineGrid::new(GridConfig::default()).unwrap();
        let ones = vec![1.0; g.len()];
        let alpha = g.config.alpha;
        assert_abs_diff_eq!(weighted_norm_sq(&g, &ones).unwrap(), 1.0 / (2.0 + alpha) + 19.0, epsilon = 1e-9);
        assert!(g.nodes[0] > 0.0);
        assert!(g.weights.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn dirichlet_map_values() {
        assert_eq!(dirichlet_map(0.0, 1.0, 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(dirichlet_map(1.0, 1.0, 1.0).unwrap(), 0.367879, epsilon = 1e-6);
        assert!(dirichlet_map(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn single_mode_galerkin() {
        let g = HalfLineGrid::new(GridConfig::default()).unwrap();
        let m = galerkin_project(&g, 1, 1.0).unwrap();
        assert_abs_diff_eq!(m.a()[(0, 0)], -(PI / 20.0).powi(2), epsilon = 1e-15);
        assert!(galerkin_project(&g, g.len(), 1.0).is_err());
    }

    #[test]
    fn noiseless_field_is_deterministic_part() {
        let g = HalfLineGrid::new(GridConfig::default()).unwrap();
        let x: Vec<f64> = g.nodes.iter().map(|&e| e * (-e).exp()).collect();
        let f = simulate_boundary_field(&g, 0.5, &x, 10, 3, false).unwrap();
        assert_eq!(f.values, deterministic_part(&g, 0.5, &x).unwrap());
    }
}
