use std::path::PathBuf;

use anyhow::{bail, Result};
use gauss_markov::simulate::{path_moments, simulate_paths, write_paths_csv, Scheme};
use gauss_markov::{GeneratorModel, TransitionKernel};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::output::{OutDir, Outcome};
use crate::Common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// z-score bound for the final-time moment check.
    pub tol: f64,
    pub model: Option<GeneratorModel>,
    pub model_path: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    pub n_steps: usize,
    /// Paths behind the moment check.
    pub n_paths: usize,
    /// Paths written to `paths.csv` (the first ones of the same batch).
    pub write_paths: usize,
    pub scheme: Scheme,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            tol: 4.0,
            model: None,
            model_path: None,
            x0: None,
            horizon: 1.0,
            n_steps: 100,
            n_paths: 10_000,
            write_paths: 10,
            scheme: Scheme::Exact,
        }
    }
}

#[derive(Serialize)]
struct MomentsReport {
    scheme: Scheme,
    n_paths: usize,
    times: Vec<f64>,
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
    theory_mean: Vec<Vec<f64>>,
    theory_var: Vec<Vec<f64>>,
    /// `(mean − m(T, x))/√(Q_ii(T)/n)` per component at the horizon.
    final_mean_z: Vec<f64>,
    /// `(var − Q_ii(T))/(Q_ii(T)√(2/(n−1)))` per component at the horizon.
    final_var_z: Vec<f64>,
    tol: f64,
    pass: bool,
}

pub fn run(common: &Common) -> Result<Outcome> {
    let mut cfg: SimulateConfig = config::load(common)?;
    let model = config::resolve_model(&mut cfg.model, &mut cfg.model_path)?;
    let x = config::state(&cfg.x0, model.dim(), "x0")?;
    cfg.x0 = Some(x.as_slice().to_vec());
    if cfg.n_paths < 2 {
        bail!("n_paths must be at least 2");
    }
    let out = config::out_dir(&cfg.out)?.to_path_buf();

    let paths = simulate_paths(&model, &x, cfg.horizon, cfg.n_steps, cfg.write_paths, cfg.seed, cfg.scheme)?;
    let mom = path_moments(&model, &x, cfg.horizon, cfg.n_steps, cfg.n_paths, cfg.seed, cfg.scheme)?;
    let family = TransitionKernel::new(model.clone());
    let n = model.dim();
    let mut theory_mean = Vec::with_capacity(mom.times.len());
    let mut theory_var = Vec::with_capacity(mom.times.len());
    for &t in &mom.times {
        theory_mean.push(family.mean(t, &x)?.as_slice().to_vec());
        theory_var.push(family.covariance(t)?.diagonal().as_slice().to_vec());
    }
    let last = mom.times.len() - 1;
    let nf = cfg.n_paths as f64;
    let mut final_mean_z = Vec::with_capacity(n);
    let mut final_var_z = Vec::with_capacity(n);
    for i in 0..n {
        let q = theory_var[last][i];
        let v = mom.cov[last][(i, i)];
        let dm = mom.mean[last][i] - theory_mean[last][i];
        if q > 0.0 {
            final_mean_z.push(dm / (q / nf).sqrt());
            final_var_z.push((v - q) / (q * (2.0 / (nf - 1.0)).sqrt()));
        } else {
            // degenerate component: any spread or offset beyond roundoff fails
            let scale = 1.0 + theory_mean[last][i].abs();
            final_mean_z.push(if dm.abs() <= 1e-9 * scale { 0.0 } else { f64::INFINITY });
            final_var_z.push(if v <= 1e-18 * scale * scale { 0.0 } else { f64::INFINITY });
        }
    }
    let pass = final_mean_z.iter().chain(&final_var_z).all(|z| z.abs() < cfg.tol);
    let report = MomentsReport {
        scheme: cfg.scheme,
        n_paths: cfg.n_paths,
        times: mom.times.clone(),
        mean: mom.mean.iter().map(|m| m.as_slice().to_vec()).collect(),
        var: mom.cov.iter().map(|c| c.diagonal().as_slice().to_vec()).collect(),
        theory_mean,
        theory_var,
        final_mean_z,
        final_var_z,
        tol: cfg.tol,
        pass,
    };

    let mut dir = OutDir::create(&out)?;
    dir.write_with("paths.csv", |w| Ok(write_paths_csv(w, &paths)?))?;
    dir.write_json("moments.json", &report)?;
    let worst = report.final_mean_z.iter().chain(&report.final_var_z).fold(0.0f64, |m, z| m.max(z.abs()));
    let outcome = Outcome {
        pass,
        summary: format!(
            "simulate: {} paths, {} steps; worst final-time moment |z| {:.3} (tol {}) {}",
            cfg.n_paths,
            cfg.n_steps,
            worst,
            cfg.tol,
            if pass { "pass" } else { "FAIL" }
        ),
    };
    dir.finish("simulate", &cfg, &outcome)?;
    Ok(outcome)
}
