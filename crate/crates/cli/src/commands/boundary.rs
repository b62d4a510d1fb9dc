use std::path::PathBuf;

use anyhow::{bail, Result};
use gauss_markov::boundary::{
    compare_modes, covariance_q, expected_weighted_norm_sq, noise_moments, q_gram_min_relative_eigenvalue, write_fields_csv,
    write_q_table_csv, BoundarySimulator, GridConfig, HalfLineGrid, ModeComparison,
};
use gauss_markov::linalg::EPS_PSD;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::output::{OutDir, Outcome};
use crate::Common;

/// Initial profile `x(η)` sampled on the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Zero,
    /// `amplitude · exp(−(η − center)²/(2 width²))`
    Gaussian { amplitude: f64, center: f64, width: f64 },
    /// Values at the grid nodes, in order.
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// z-score bound for the variance and mean checks.
    pub tol: f64,
    pub grid: GridConfig,
    pub t: f64,
    pub n_steps: usize,
    pub n_replicas: usize,
    pub noise: bool,
    pub initial: InitialProfile,
    /// Points where the noise variance is compared with `q(t, ξ, ξ)`.
    pub probe_points: Vec<f64>,
    /// Replicas written to `fields.csv`.
    pub write_replicas: usize,
    pub q_times: Vec<f64>,
    pub q_points: Vec<f64>,
    /// Number of sine modes in the Galerkin comparison; 0 skips it.
    pub galerkin_modes: usize,
    pub lambda: f64,
    pub galerkin_tol: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            tol: 4.0,
            grid: GridConfig::default(),
            t: 1.0,
            n_steps: 200,
            n_replicas: 1000,
            noise: true,
            initial: InitialProfile::Gaussian { amplitude: 1.0, center: 2.0, width: 0.5 },
            probe_points: vec![0.5, 1.0, 2.0],
            write_replicas: 4,
            q_times: vec![0.5, 1.0, 2.0],
            q_points: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            galerkin_modes: 4,
            lambda: 1.0,
            galerkin_tol: 0.05,
        }
    }
}

#[derive(Serialize)]
struct PointCheck {
    xi: f64,
    q: f64,
    var: f64,
    var_z: f64,
    mean_z: f64,
    skewness: f64,
    excess_kurtosis: f64,
}

#[derive(Serialize)]
struct GramCheck {
    t: f64,
    min_relative_eigenvalue: f64,
    psd: bool,
}

#[derive(Serialize)]
struct Report {
    t: f64,
    noise: bool,
    n_nodes: usize,
    /// Largest `|u − deterministic part|` over nodes when noise is off.
    noiseless_max_deviation: Option<f64>,
    points: Vec<PointCheck>,
    weighted_norm_sq_mc: Option<f64>,
    weighted_norm_sq_stderr: Option<f64>,
    weighted_norm_sq_exact: f64,
    gram: Vec<GramCheck>,
    galerkin: Option<ModeComparison>,
    pass: bool,
}

fn profile(initial: &InitialProfile, grid: &HalfLineGrid) -> Result<Vec<f64>> {
    Ok(match initial {
        InitialProfile::Zero => vec![0.0; grid.len()],
        InitialProfile::Gaussian { amplitude, center, width } => {
            if !(*width > 0.0) {
                bail!("initial width must be positive");
            }
            grid.nodes.iter().map(|&e| amplitude * (-(e - center).powi(2) / (2.0 * width * width)).exp()).collect()
        }
        InitialProfile::Table { values } => {
            if values.len() != grid.len() {
                bail!("initial table has {} values, grid has {} nodes", values.len(), grid.len());
            }
            values.clone()
        }
    })
}

pub fn run(common: &Common) -> Result<Outcome> {
    let cfg: BoundaryConfig = config::load(common)?;
    let grid = HalfLineGrid::new(cfg.grid)?;
    let x = profile(&cfg.initial, &grid)?;
    if cfg.noise && cfg.n_replicas < 2 {
        bail!("n_replicas must be at least 2");
    }
    if cfg.probe_points.iter().chain(&cfg.q_points).any(|&p| !(p > 0.0)) {
        bail!("probe and q points must be positive");
    }
    let out = config::out_dir(&cfg.out)?.to_path_buf();

    let sim = BoundarySimulator::new(&grid, cfg.t, cfg.n_steps)?;
    let fields = (0..cfg.write_replicas as u64)
        .map(|i| sim.field(&x, cfg.seed, i, cfg.noise))
        .collect::<gauss_markov::Result<Vec<_>>>()?;

    let mut pass = true;
    let mut noiseless_max_deviation = None;
    let mut points = Vec::new();
    let (mut wn_mc, mut wn_se) = (None, None);
    if cfg.noise {
        let psim = BoundarySimulator::at_points(&grid, cfg.t, cfg.n_steps, cfg.probe_points.clone())?;
        let m = noise_moments(&psim, cfg.n_replicas, cfg.seed)?;
        let n = cfg.n_replicas as f64;
        for (j, &xi) in cfg.probe_points.iter().enumerate() {
            let q = covariance_q(cfg.t, xi, xi)?;
            let var_z = (m.var[j] - q) / m.var_stderr[j].max(f64::MIN_POSITIVE);
            let mean_z = m.mean[j] / (m.var[j] / n).sqrt().max(f64::MIN_POSITIVE);
            pass &= var_z.abs() < cfg.tol && mean_z.abs() < cfg.tol;
            points.push(PointCheck {
                xi,
                q,
                var: m.var[j],
                var_z,
                mean_z,
                skewness: m.skewness[j],
                excess_kurtosis: m.excess_kurtosis[j],
            });
        }
        let gm = noise_moments(&sim, cfg.n_replicas, cfg.seed)?;
        wn_mc = gm.weighted_norm_sq;
        wn_se = gm.weighted_norm_sq_stderr;
    } else {
        let det = sim.deterministic(&x)?;
        let dev = fields
            .iter()
            .flat_map(|f| f.values.iter().zip(det.iter()).map(|(u, d)| (u - d).abs()))
            .fold(0.0, f64::max);
        pass &= dev == 0.0;
        noiseless_max_deviation = Some(dev);
    }
    let weighted_norm_sq_exact = expected_weighted_norm_sq(&grid, cfg.t)?;

    let mut gram = Vec::new();
    for &t in &cfg.q_times {
        let e = q_gram_min_relative_eigenvalue(t, &cfg.q_points)?;
        let psd = e >= -EPS_PSD;
        pass &= psd;
        gram.push(GramCheck { t, min_relative_eigenvalue: e, psd });
    }
    let galerkin = if cfg.galerkin_modes > 0 {
        let c = compare_modes(&grid, cfg.galerkin_modes, cfg.lambda, cfg.t)?;
        pass &= c.max_diagonal_rel_error <= cfg.galerkin_tol;
        Some(c)
    } else {
        None
    };

    let report = Report {
        t: cfg.t,
        noise: cfg.noise,
        n_nodes: grid.len(),
        noiseless_max_deviation,
        points,
        weighted_norm_sq_mc: wn_mc,
        weighted_norm_sq_stderr: wn_se,
        weighted_norm_sq_exact,
        gram,
        galerkin,
        pass,
    };
    let mut dir = OutDir::create(&out)?;
    dir.write_with("fields.csv", |w| Ok(write_fields_csv(w, &fields)?))?;
    dir.write_with("q_table.csv", |w| Ok(write_q_table_csv(w, &cfg.q_times, &cfg.q_points)?))?;
    dir.write_json("boundary.json", &report)?;
    let outcome = Outcome {
        pass,
        summary: format!(
            "boundary: t = {}, {} nodes, noise {}; E|u|²_H exact {:.6}{} {}",
            cfg.t,
            grid.len(),
            if cfg.noise { "on" } else { "off" },
            weighted_norm_sq_exact,
            report
                .galerkin
                .as_ref()
                .map_or(String::new(), |g| format!(", Galerkin max rel error {:.4}", g.max_diagonal_rel_error)),
            if pass { "pass" } else { "FAIL" }
        ),
    };
    dir.finish("boundary", &cfg, &outcome)?;
    Ok(outcome)
}
