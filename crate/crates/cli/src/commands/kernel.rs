use std::path::PathBuf;

use anyhow::{bail, Result};
use gauss_markov::identify::{default_probes, KernelSamples};
use gauss_markov::semigroup::{verify_chapman_kolmogorov, ChapmanKolmogorovReport};
use gauss_markov::GeneratorModel;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::output::{OutDir, Outcome};
use crate::Common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Chapman–Kolmogorov tolerance.
    pub tol: f64,
    pub model: Option<GeneratorModel>,
    pub model_path: Option<PathBuf>,
    pub times: Vec<f64>,
    /// Probe states; the origin and `±scale·e_i` when absent.
    pub probes: Option<Vec<Vec<f64>>>,
    pub probe_scale: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            tol: 1e-9,
            model: None,
            model_path: None,
            times: vec![0.001, 0.002, 0.25, 0.5, 1.0, 2.0],
            probes: None,
            probe_scale: 1.0,
        }
    }
}

#[derive(Serialize)]
struct CkSummary {
    tol: f64,
    n_checks: usize,
    max_r_mean: f64,
    max_r_cov: f64,
    pass: bool,
    checks: Vec<CkEntry>,
}

#[derive(Serialize)]
struct CkEntry {
    x: Vec<f64>,
    #[serde(flatten)]
    report: ChapmanKolmogorovReport,
}

pub fn run(common: &Common) -> Result<Outcome> {
    let mut cfg: KernelConfig = config::load(common)?;
    let model = config::resolve_model(&mut cfg.model, &mut cfg.model_path)?;
    if cfg.times.is_empty() {
        bail!("the time grid is empty");
    }
    let n = model.dim();
    let probes: Vec<DVector<f64>> = match &cfg.probes {
        Some(p) => p.iter().map(|v| config::state(&Some(v.clone()), n, "probe")).collect::<Result<_>>()?,
        None => default_probes(n, cfg.probe_scale),
    };
    cfg.probes = Some(probes.iter().map(|p| p.as_slice().to_vec()).collect());
    let out = config::out_dir(&cfg.out)?.to_path_buf();

    let samples = KernelSamples::from_model(&model, &cfg.times, &probes)?;
    let mut checks = Vec::new();
    for &s in &cfg.times {
        for &t in &cfg.times {
            for x in &probes {
                let report = verify_chapman_kolmogorov(&model, s, t, x, cfg.tol)?;
                checks.push(CkEntry { x: x.as_slice().to_vec(), report });
            }
        }
    }
    let max_r_mean = checks.iter().map(|c| c.report.r_mean).fold(0.0, f64::max);
    let max_r_cov = checks.iter().map(|c| c.report.r_cov).fold(0.0, f64::max);
    let pass = checks.iter().all(|c| c.report.pass);
    let ck = CkSummary { tol: cfg.tol, n_checks: checks.len(), max_r_mean, max_r_cov, pass, checks };

    let mut dir = OutDir::create(&out)?;
    dir.write_json("samples.json", &samples)?;
    dir.write_json("chapman_kolmogorov.json", &ck)?;
    let outcome = Outcome {
        pass,
        summary: format!(
            "kernel: {} times, {} probes; Chapman–Kolmogorov max residuals mean {:e}, cov {:e} (tol {:e}) {}",
            cfg.times.len(),
            probes.len(),
            max_r_mean,
            max_r_cov,
            cfg.tol,
            if pass { "pass" } else { "FAIL" }
        ),
    };
    dir.finish("kernel", &cfg, &outcome)?;
    Ok(outcome)
}
