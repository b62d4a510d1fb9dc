use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gauss_markov::identify::{identify, IdentifyOptions, IdentifyStatus, KernelSamples};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::output::{OutDir, Outcome};
use crate::Common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Re-simulation tolerance.
    pub tol: f64,
    /// Kernel-samples JSON, as written by `kernel`.
    pub samples: Option<PathBuf>,
    pub affine_tol: f64,
    pub cov_dependence_tol: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        let d = IdentifyOptions::default();
        Self {
            seed: 0,
            out: None,
            tol: d.resim_tol,
            samples: None,
            affine_tol: d.affine_tol,
            cov_dependence_tol: d.cov_dependence_tol,
        }
    }
}

pub fn run(common: &Common) -> Result<Outcome> {
    let cfg: IdentifyConfig = config::load(common)?;
    let Some(path) = &cfg.samples else {
        bail!("no kernel samples: set \"samples\" in the config");
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading samples {}", path.display()))?;
    let samples = KernelSamples::from_json(&text).with_context(|| format!("parsing samples {}", path.display()))?;
    let out = config::out_dir(&cfg.out)?.to_path_buf();
    let options = IdentifyOptions { affine_tol: cfg.affine_tol, resim_tol: cfg.tol, cov_dependence_tol: cfg.cov_dependence_tol };
    let id = identify(&samples, &options)?;
    let report = id.to_report();

    let mut dir = OutDir::create(&out)?;
    dir.write_json("identified.json", &report)?;
    dir.write_json("model.json", &id.model()?)?;
    let outcome = Outcome {
        pass: id.status == IdentifyStatus::Pass,
        summary: format!(
            "identify: {}; max re-simulation residual mean {:e}, cov {:e} (tol {:e})",
            report.message, report.diagnostics.max_resim_mean, report.diagnostics.max_resim_cov, cfg.tol
        ),
    };
    dir.finish("identify", &cfg, &outcome)?;
    Ok(outcome)
}
