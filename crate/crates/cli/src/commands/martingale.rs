use std::path::PathBuf;

use anyhow::Result;
use gauss_markov::simulate::{run_martingale, MartingaleTolerances, Scheme};
use gauss_markov::GeneratorModel;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::output::{OutDir, Outcome};
use crate::Common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MartingaleConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Relative tolerance on the variance slope.
    pub tol: f64,
    pub model: Option<GeneratorModel>,
    pub model_path: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    /// Projection direction; all ones when absent.
    pub h: Option<Vec<f64>>,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub scheme: Scheme,
    pub mean_z: f64,
    pub increment_z: f64,
}

impl Default for MartingaleConfig {
    fn default() -> Self {
        let t = MartingaleTolerances::default();
        Self {
            seed: 0,
            out: None,
            tol: t.slope_rel,
            model: None,
            model_path: None,
            x0: None,
            h: None,
            horizon: 1.0,
            n_steps: 1000,
            n_paths: 100_000,
            scheme: Scheme::Exact,
            mean_z: t.mean_z,
            increment_z: t.increment_z,
        }
    }
}

pub fn run(common: &Common) -> Result<Outcome> {
    let mut cfg: MartingaleConfig = config::load(common)?;
    let model = config::resolve_model(&mut cfg.model, &mut cfg.model_path)?;
    let n = model.dim();
    let x = config::state(&cfg.x0, n, "x0")?;
    let h = match &cfg.h {
        Some(_) => config::state(&cfg.h, n, "h")?,
        None => DVector::from_element(n, 1.0),
    };
    cfg.x0 = Some(x.as_slice().to_vec());
    cfg.h = Some(h.as_slice().to_vec());
    let out = config::out_dir(&cfg.out)?.to_path_buf();
    let tol = MartingaleTolerances { mean_z: cfg.mean_z, slope_rel: cfg.tol, increment_z: cfg.increment_z };

    let diag = run_martingale(&model, &x, cfg.horizon, cfg.n_steps, cfg.n_paths, &h, cfg.seed, cfg.scheme, &tol)?;
    let mut dir = OutDir::create(&out)?;
    dir.write_json("martingale.json", &diag)?;
    let outcome = Outcome {
        pass: diag.pass,
        summary: format!(
            "martingale: {} paths; slope {:.5} vs theory {:.5} (rel error {:.4}, tol {}), max mean |z| {:.3} {}",
            cfg.n_paths,
            diag.fitted_slope,
            diag.theory_slope,
            diag.slope_rel_error,
            cfg.tol,
            diag.max_mean_z,
            if diag.pass { "pass" } else { "FAIL" }
        ),
    };
    dir.finish("martingale", &cfg, &outcome)?;
    Ok(outcome)
}
