//! Path sampling for the linear SDE and the martingale diagnostics built on
//! `M(t) = Z(t) − m(t, x) − ∫₀ᵗ A (Z(s) − m(s, x)) ds`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::psd_sqrt;
use crate::model::GeneratorModel;
use crate::rng::{self, StreamRng};
use crate::semigroup::{self, TransitionKernel};

/// Paths are generated in blocks of this many, each block reduced on its own
/// and merged in index order, so results do not depend on thread count.
const BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Chained draws from the transition kernel.
    Exact,
    EulerMaruyama,
}

/// A sampled trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub seed: u64,
    /// Stream index under `seed`; the path id in batch runs.
    pub stream: u64,
}

/// One-step affine-plus-noise map `z ↦ F z + c + S ξ`.
#[derive(Debug, Clone)]
struct Stepper {
    transition: DMatrix<f64>,
    offset: DVector<f64>,
    noise: DMatrix<f64>,
}

impl Stepper {
    fn new(model: &GeneratorModel, dt: f64, scheme: Scheme) -> Result<Self> {
        let n = model.dim();
        Ok(match scheme {
            Scheme::Exact => {
                let family = TransitionKernel::new(model.clone());
                let snap = family.snapshot(dt)?;
                Self {
                    transition: snap.evolution.clone(),
                    offset: snap.drift.clone(),
                    noise: psd_sqrt(&snap.covariance)?,
                }
            }
            Scheme::EulerMaruyama => Self {
                transition: DMatrix::<f64>::identity(n, n) + model.a() * dt,
                offset: model.b_v() * dt,
                noise: psd_sqrt(model.q_diff())? * dt.sqrt(),
            },
        })
    }

    fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Writes `n_steps + 1` states, row by row, into `buf`.
    fn fill(&self, x: &[f64], n_steps: usize, rng: &mut StreamRng, buf: &mut [f64], xi: &mut [f64]) {
        let n = self.dim();
        buf[..n].copy_from_slice(x);
        for k in 0..n_steps {
            for v in xi.iter_mut() {
                *v = rng::standard_normal(rng);
            }
            let (prev, next) = buf.split_at_mut((k + 1) * n);
            let z = &prev[k * n..];
            let out = &mut next[..n];
            for i in 0..n {
                let mut acc = self.offset[i];
                for j in 0..n {
                    acc += self.transition[(i, j)] * z[j] + self.noise[(i, j)] * xi[j];
                }
                out[i] = acc;
            }
        }
    }
}

fn check_state(model: &GeneratorModel, x: &DVector<f64>) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Shape(format!(
            "initial state has length {}, model dimension is {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(())
}

fn uniform_grid(horizon: f64, n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::Invalid("n_steps must be at least 1".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::NonPositiveTime(horizon));
    }
    let dt = horizon / n_steps as f64;
    Ok((0..=n_steps).map(|k| if k == n_steps { horizon } else { k as f64 * dt }).collect())
}

/// One draw from `μ(δ, x)`; the first of [`exact_transition_samples`].
pub fn exact_transition_sample(model: &GeneratorModel, x: &DVector<f64>, delta: f64, seed: u64) -> Result<DVector<f64>> {
    Ok(exact_transition_samples(model, x, delta, seed, 1)?.remove(0))
}

/// `n` independent draws from `μ(δ, x)`; draw `i` uses stream `i` under `seed`.
pub fn exact_transition_samples(model: &GeneratorModel, x: &DVector<f64>, delta: f64, seed: u64, n: usize) -> Result<Vec<DVector<f64>>> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveTime(delta));
    }
    check_state(model, x)?;
    let sampler = semigroup::kernel(model, delta, x)?.sampler()?;
    Ok((0..n as u64).map(|i| sampler.draw(&mut rng::stream_rng(seed, i))).collect())
}

fn path_with(
    model: &GeneratorModel,
    x: &DVector<f64>,
    horizon: f64,
    n_steps: usize,
    seed: u64,
    stream: u64,
    scheme: Scheme,
) -> Result<SamplePath> {
    check_state(model, x)?;
    let times = uniform_grid(horizon, n_steps)?;
    let stepper = Stepper::new(model, horizon / n_steps as f64, scheme)?;
    Ok(fill_path(&stepper, x, &times, seed, stream))
}

fn fill_path(stepper: &Stepper, x: &DVector<f64>, times: &[f64], seed: u64, stream: u64) -> SamplePath {
    let n = stepper.dim();
    let n_steps = times.len() - 1;
    let mut buf = vec![0.0; (n_steps + 1) * n];
    let mut xi = vec![0.0; n];
    let mut rng = rng::stream_rng(seed, stream);
    stepper.fill(x.as_slice(), n_steps, &mut rng, &mut buf, &mut xi);
    SamplePath {
        times: times.to_vec(),
        states: buf.chunks(n).map(DVector::from_column_slice).collect(),
        seed,
        stream,
    }
}

/// Chains exact kernel draws on the uniform grid `k·T/n_steps`; the law at
/// every grid time is exactly `μ(t_k, x)`.
pub fn simulate_path(model: &GeneratorModel, x: &DVector<f64>, horizon: f64, n_steps: usize, seed: u64) -> Result<SamplePath> {
    path_with(model, x, horizon, n_steps, seed, 0, Scheme::Exact)
}

/// Explicit Euler–Maruyama: `Z_{k+1} = Z_k + (A Z_k + b)Δ + Q^{1/2} √Δ ξ_k`.
pub fn euler_maruyama_path(model: &GeneratorModel, x: &DVector<f64>, horizon: f64, n_steps: usize, seed: u64) -> Result<SamplePath> {
    path_with(model, x, horizon, n_steps, seed, 0, Scheme::EulerMaruyama)
}

/// `n_paths` paths; path `i` uses stream `i` under `seed`.
pub fn simulate_paths(
    model: &GeneratorModel,
    x: &DVector<f64>,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<Vec<SamplePath>> {
    check_state(model, x)?;
    let times = uniform_grid(horizon, n_steps)?;
    let stepper = Stepper::new(model, horizon / n_steps as f64, scheme)?;
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|i| fill_path(&stepper, x, &times, seed, i))
        .collect())
}

/// Per-grid-time sample moments of `Z(t_k)` across many paths, computed
/// without storing the paths.
#[derive(Debug, Clone)]
pub struct PathMoments {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Flat per-time sums `Σ d` (`len·n`) and `Σ d dᵀ` (`len·n·n`).
#[derive(Clone)]
struct MomentSums {
    n: usize,
    sum: Vec<f64>,
    outer: Vec<f64>,
}

impl MomentSums {
    fn new(len: usize, dim: usize) -> Self {
        Self { n: 0, sum: vec![0.0; len * dim], outer: vec![0.0; len * dim * dim] }
    }

    fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.outer.iter_mut().zip(&other.outer).for_each(|(a, b)| *a += b);
    }
}

/// Moments of `Z(t_k)` over `n_paths` paths started at `x`, centred at
/// `m(t_k, x)` before accumulation to limit cancellation.
pub fn path_moments(
    model: &GeneratorModel,
    x: &DVector<f64>,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PathMoments> {
    check_state(model, x)?;
    if n_paths < 2 {
        return Err(Error::Invalid("moments need at least two paths".into()));
    }
    let times = uniform_grid(horizon, n_steps)?;
    let stepper = Stepper::new(model, horizon / n_steps as f64, scheme)?;
    let family = TransitionKernel::new(model.clone());
    let centers: Vec<DVector<f64>> = times.iter().map(|&t| family.mean(t, x)).collect::<Result<_>>()?;
    let flat_centers: Vec<f64> = centers.iter().flat_map(|c| c.iter().copied()).collect();
    let n = model.dim();
    let len = times.len();
    let blocks: Vec<MomentSums> = (0..n_paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = MomentSums::new(len, n);
            let mut buf = vec![0.0; len * n];
            let mut xi = vec![0.0; n];
            for i in (b * BLOCK)..((b + 1) * BLOCK).min(n_paths) {
                let mut r = rng::stream_rng(seed, i as u64);
                stepper.fill(x.as_slice(), n_steps, &mut r, &mut buf, &mut xi);
                buf.iter_mut().zip(&flat_centers).for_each(|(v, c)| *v -= c);
                for k in 0..len {
                    let d = &buf[k * n..(k + 1) * n];
                    let outer = &mut acc.outer[k * n * n..(k + 1) * n * n];
                    for p in 0..n {
                        acc.sum[k * n + p] += d[p];
                        for q in 0..n {
                            outer[p * n + q] += d[p] * d[q];
                        }
                    }
                }
                acc.n += 1;
            }
            acc
        })
        .collect();
    let mut total = MomentSums::new(len, n);
    for b in &blocks {
        total.merge(b);
    }
    let nf = total.n as f64;
    let mut mean = Vec::with_capacity(len);
    let mut cov = Vec::with_capacity(len);
    for k in 0..len {
        let m = DVector::from_column_slice(&total.sum[k * n..(k + 1) * n]) / nf;
        let o = DMatrix::from_row_slice(n, n, &total.outer[k * n * n..(k + 1) * n * n]);
        cov.push((o - &m * m.transpose() * nf) / (nf - 1.0));
        mean.push(m + &centers[k]);
    }
    Ok(PathMoments { times, n_paths, mean, cov })
}

/// Moments of `M^h(t_k) = ⟨M(t_k), h⟩` across paths.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleDiagnostic {
    pub h: Vec<f64>,
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Standard error of each entry of `mean`.
    pub mean_stderr: Vec<f64>,
    /// `t · |Q^{1/2} h|²`
    pub theory_var: Vec<f64>,
    pub theory_slope: f64,
    /// Least-squares slope of `var` against `times`.
    pub fitted_slope: f64,
    pub slope_rel_error: f64,
    /// Correlation z-scores of `M^h(c_{i+1}) − M^h(c_i)` against `M^h(c_i)`
    /// over ten checkpoints `c_i`.
    pub increment_z: Vec<f64>,
    pub max_mean_z: f64,
    pub pass: bool,
}

/// Thresholds for [`MartingaleDiagnostic::pass`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MartingaleTolerances {
    /// Maximum `|mean| / stderr` at any grid time.
    pub mean_z: f64,
    /// Maximum relative error of the fitted variance slope.
    pub slope_rel: f64,
    /// Maximum increment-correlation z-score.
    pub increment_z: f64,
}

impl Default for MartingaleTolerances {
    fn default() -> Self {
        Self { mean_z: 4.0, slope_rel: 0.03, increment_z: 4.0 }
    }
}

const CHECKPOINTS: usize = 10;

/// Streaming accumulator for [`MartingaleDiagnostic`].
///
/// `m(t, x)` comes from the closed-form family, not from the sample; the time
/// integral uses the trapezoid rule on the path grid.
#[derive(Debug, Clone)]
pub struct MartingaleAccumulator {
    times: Vec<f64>,
    h: DVector<f64>,
    theory_slope: f64,
    /// `L(t_k)ᵀ h` and `L(t_k)ᵀ Aᵀ h`
    lt_h: Vec<DVector<f64>>,
    lt_ath: Vec<DVector<f64>>,
    /// `⟨g(t_k), h⟩` and `⟨g(t_k), Aᵀ h⟩`
    g_h: Vec<f64>,
    g_ath: Vec<f64>,
    ath: DVector<f64>,
    checkpoints: Vec<usize>,
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    /// per checkpoint pair: Σa, Σb, Σa², Σb², Σab
    inc: Vec<[f64; 5]>,
    scratch: Vec<f64>,
}

impl MartingaleAccumulator {
    pub fn new(model: &GeneratorModel, times: &[f64], h: &DVector<f64>) -> Result<Self> {
        if h.len() != model.dim() {
            return Err(Error::Shape(format!("direction has length {}, expected {}", h.len(), model.dim())));
        }
        if h.iter().all(|&v| v == 0.0) {
            return Err(Error::Invalid("direction h must be nonzero".into()));
        }
        if times.len() < 2 || times[0] != 0.0 || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("grid must start at 0 and increase".into()));
        }
        let family = TransitionKernel::new(model.clone());
        let ath = model.a().transpose() * h;
        let mut lt_h = Vec::with_capacity(times.len());
        let mut lt_ath = Vec::with_capacity(times.len());
        let mut g_h = Vec::with_capacity(times.len());
        let mut g_ath = Vec::with_capacity(times.len());
        for &t in times {
            let (l, g) = {
                let s = family.snapshot(t)?;
                (s.evolution.clone(), s.drift.clone())
            };
            lt_h.push(l.transpose() * h);
            lt_ath.push(l.transpose() * &ath);
            g_h.push(g.dot(h));
            g_ath.push(g.dot(&ath));
        }
        let k = times.len() - 1;
        let mut checkpoints: Vec<usize> = (1..=CHECKPOINTS).map(|i| i * k / CHECKPOINTS).filter(|&c| c > 0).collect();
        checkpoints.dedup();
        let pairs = checkpoints.len().saturating_sub(1);
        Ok(Self {
            times: times.to_vec(),
            h: h.clone(),
            theory_slope: h.dot(&(model.q_diff() * h)),
            lt_h,
            lt_ath,
            g_h,
            g_ath,
            ath,
            checkpoints,
            n: 0,
            sum: vec![0.0; times.len()],
            sum_sq: vec![0.0; times.len()],
            inc: vec![[0.0; 5]; pairs],
            scratch: vec![0.0; times.len()],
        })
    }

    fn dim(&self) -> usize {
        self.h.len()
    }

    /// Adds one path given as `(K + 1) · N` row-major states.
    pub fn push_flat(&mut self, states: &[f64]) {
        let n = self.dim();
        let x = &states[..n];
        let dot = |a: &[f64], b: &DVector<f64>| a.iter().zip(b.iter()).map(|(p, q)| p * q).sum::<f64>();
        let mut integral = 0.0;
        let mut prev_w = 0.0;
        for k in 0..self.times.len() {
            let z = &states[k * n..(k + 1) * n];
            let y = dot(z, &self.h) - dot(x, &self.lt_h[k]) - self.g_h[k];
            let w = dot(z, &self.ath) - dot(x, &self.lt_ath[k]) - self.g_ath[k];
            if k > 0 {
                integral += 0.5 * (prev_w + w) * (self.times[k] - self.times[k - 1]);
            }
            prev_w = w;
            let m = if k == 0 { 0.0 } else { y - integral };
            self.scratch[k] = m;
            self.sum[k] += m;
            self.sum_sq[k] += m * m;
        }
        for (p, w) in self.checkpoints.windows(2).enumerate() {
            let a = self.scratch[w[0]];
            let b = self.scratch[w[1]] - a;
            let s = &mut self.inc[p];
            s[0] += a;
            s[1] += b;
            s[2] += a * a;
            s[3] += b * b;
            s[4] += a * b;
        }
        self.n += 1;
    }

    pub fn push(&mut self, path: &SamplePath) -> Result<()> {
        if path.times != self.times {
            return Err(Error::Invalid("path grid differs from the accumulator grid".into()));
        }
        let flat: Vec<f64> = path.states.iter().flat_map(|s| s.iter().copied()).collect();
        self.push_flat(&flat);
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
        }
        for (a, b) in self.inc.iter_mut().zip(&other.inc) {
            for i in 0..5 {
                a[i] += b[i];
            }
        }
    }

    fn empty_like(&self) -> Self {
        let mut e = self.clone();
        e.n = 0;
        e.sum.iter_mut().for_each(|v| *v = 0.0);
        e.sum_sq.iter_mut().for_each(|v| *v = 0.0);
        e.inc.iter_mut().for_each(|v| *v = [0.0; 5]);
        e
    }

    pub fn finish(&self, tol: &MartingaleTolerances) -> Result<MartingaleDiagnostic> {
        if self.n < 2 {
            return Err(Error::Invalid("martingale statistics need at least two paths".into()));
        }
        let nf = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / nf).collect();
        let var: Vec<f64> = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(s2, m)| ((s2 - nf * m * m) / (nf - 1.0)).max(0.0))
            .collect();
        let mean_stderr: Vec<f64> = var.iter().map(|v| (v / nf).sqrt()).collect();
        let theory_var: Vec<f64> = self.times.iter().map(|t| t * self.theory_slope).collect();
        let fitted_slope = ols_slope(&self.times, &var);
        let max_mean_z = mean
            .iter()
            .zip(&mean_stderr)
            // floor keeps round-off in noiseless runs from reading as a violation
            .map(|(m, se)| (m / se.max(1e-12)).abs())
            .fold(0.0, f64::max);
        let increment_z: Vec<f64> = self
            .inc
            .iter()
            .map(|s| {
                let ca = s[2] - s[0] * s[0] / nf;
                let cb = s[3] - s[1] * s[1] / nf;
                let cab = s[4] - s[0] * s[1] / nf;
                if ca > 0.0 && cb > 0.0 { cab / (ca * cb).sqrt() * nf.sqrt() } else { 0.0 }
            })
            .collect();
        let (slope_rel_error, slope_ok) = if self.theory_slope > 0.0 {
            let e = (fitted_slope - self.theory_slope).abs() / self.theory_slope;
            (e, e <= tol.slope_rel)
        } else {
            let scale = var.iter().copied().fold(0.0, f64::max);
            (scale, scale <= 1e-12)
        };
        let increments_ok = increment_z.iter().all(|z| z.abs() < tol.increment_z);
        let pass = max_mean_z <= tol.mean_z && slope_ok && increments_ok;
        Ok(MartingaleDiagnostic {
            h: self.h.as_slice().to_vec(),
            times: self.times.clone(),
            n_paths: self.n,
            mean,
            var,
            mean_stderr,
            theory_var,
            theory_slope: self.theory_slope,
            fitted_slope,
            slope_rel_error,
            increment_z,
            max_mean_z,
            pass,
        })
    }
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Martingale diagnostics over stored paths sharing one grid.
pub fn martingale_stats(
    model: &GeneratorModel,
    paths: &[SamplePath],
    h: &DVector<f64>,
    tol: &MartingaleTolerances,
) -> Result<MartingaleDiagnostic> {
    let first = paths.first().ok_or_else(|| Error::Invalid("no paths".into()))?;
    let mut acc = MartingaleAccumulator::new(model, &first.times, h)?;
    for p in paths {
        if p.states.iter().any(|s| s.len() != model.dim()) {
            return Err(Error::Shape("path state dimension differs from the model".into()));
        }
        acc.push(p)?;
    }
    acc.finish(tol)
}

/// Generates `n_paths` paths and reduces them to martingale diagnostics
/// without keeping them in memory.
#[allow(clippy::too_many_arguments)]
pub fn run_martingale(
    model: &GeneratorModel,
    x: &DVector<f64>,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    h: &DVector<f64>,
    seed: u64,
    scheme: Scheme,
    tol: &MartingaleTolerances,
) -> Result<MartingaleDiagnostic> {
    check_state(model, x)?;
    let times = uniform_grid(horizon, n_steps)?;
    let stepper = Stepper::new(model, horizon / n_steps as f64, scheme)?;
    let template = MartingaleAccumulator::new(model, &times, h)?;
    let n = model.dim();
    let blocks: Vec<MartingaleAccumulator> = (0..n_paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = template.empty_like();
            let mut buf = vec![0.0; times.len() * n];
            let mut xi = vec![0.0; n];
            for i in (b * BLOCK)..((b + 1) * BLOCK).min(n_paths) {
                let mut r = rng::stream_rng(seed, i as u64);
                stepper.fill(x.as_slice(), n_steps, &mut r, &mut buf, &mut xi);
                acc.push_flat(&buf);
            }
            acc
        })
        .collect();
    let mut total = template.empty_like();
    for b in &blocks {
        total.merge(b);
    }
    total.finish(tol)
}

/// CSV with header `path_id,t,z_0,...,z_{N-1}`.
pub fn write_paths_csv<W: Write>(mut out: W, paths: &[SamplePath]) -> Result<()> {
    let n = paths.first().map_or(0, |p| p.states.first().map_or(0, |s| s.len()));
    let mut header = String::from("path_id,t");
    for i in 0..n {
        header.push_str(&format!(",z_{i}"));
    }
    writeln!(out, "{header}")?;
    for p in paths {
        for (t, z) in p.times.iter().zip(&p.states) {
            write!(out, "{},{}", p.stream, t)?;
            for v in z.iter() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
