use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Result};
use gauss_markov::generator::{
    apply_generator, corpus_case, family, generator_check, CylindricalFunction, GaussianBump, GeneratorReport, SmoothFn, Trig, Wave,
};
use gauss_markov::GeneratorModel;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::output::{OutDir, Outcome};
use crate::Common;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveName {
    Sin,
    Cos,
}

/// One test function and the point where the check runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// `sin` or `cos` of `Σ wᵢ ⟨x, hᵢ⟩ + phase`.
    Trig { wave: WaveName, directions: Vec<Vec<f64>>, frequencies: Vec<f64>, #[serde(default)] phase: f64, x: Vec<f64> },
    /// `exp(−|y − center|²/(2 width²))`.
    GaussianBump { directions: Vec<Vec<f64>>, center: Vec<f64>, width: f64, x: Vec<f64> },
    /// A seeded member of a library family; the seed defaults to the
    /// master seed plus the function's index.
    Family { name: String, directions: Vec<Vec<f64>>, seed: Option<u64>, x: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Optional bound on the residual at the smallest step.
    pub tol: Option<f64>,
    pub model: Option<GeneratorModel>,
    pub model_path: Option<PathBuf>,
    pub functions: Vec<FunctionSpec>,
    pub deltas: Vec<f64>,
    /// Resolvent shifts compared for the λ-independence check.
    pub lambdas: Vec<f64>,
    pub lambda_tol: f64,
    /// Seeds of the built-in mild-scale corpus to run in addition.
    pub corpus_seeds: Vec<u64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            tol: None,
            model: None,
            model_path: None,
            functions: vec![FunctionSpec::Trig {
                wave: WaveName::Sin,
                directions: vec![vec![1.0]],
                frequencies: vec![1.0],
                phase: 0.0,
                x: vec![0.0],
            }],
            deltas: vec![0.1, 0.05, 0.025],
            lambdas: vec![1.0, 5.0],
            lambda_tol: 1e-12,
            corpus_seeds: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct CaseReport {
    source: String,
    #[serde(flatten)]
    report: GeneratorReport,
    /// `Lφ(x)` under each configured λ.
    lambda_values: Vec<f64>,
    lambda_spread: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Report {
    deltas: Vec<f64>,
    final_residual_tol: Option<f64>,
    lambda_tol: f64,
    cases: Vec<CaseReport>,
    pass: bool,
}

fn vectors(rows: &[Vec<f64>], dim: usize) -> Result<Vec<DVector<f64>>> {
    rows.iter()
        .map(|r| {
            if r.len() != dim {
                bail!("direction has {} entries but the model has dimension {dim}", r.len());
            }
            Ok(DVector::from_vec(r.clone()))
        })
        .collect()
}

fn build(spec: &FunctionSpec, dim: usize, default_seed: u64) -> Result<(CylindricalFunction, DVector<f64>)> {
    let (phi, x) = match spec {
        FunctionSpec::Trig { wave, directions, frequencies, phase, x } => {
            if frequencies.len() != directions.len() {
                bail!("trig needs one frequency per direction");
            }
            let f = Trig {
                wave: match wave {
                    WaveName::Sin => Wave::Sin,
                    WaveName::Cos => Wave::Cos,
                },
                w: DVector::from_vec(frequencies.clone()),
                phase: *phase,
            };
            (CylindricalFunction::new(vectors(directions, dim)?, Arc::new(f) as Arc<dyn SmoothFn>)?, x)
        }
        FunctionSpec::GaussianBump { directions, center, width, x } => {
            if center.len() != directions.len() {
                bail!("gaussian_bump needs one center coordinate per direction");
            }
            if !(*width > 0.0) {
                bail!("gaussian_bump width must be positive");
            }
            let f = GaussianBump { center: DVector::from_vec(center.clone()), width: *width };
            (CylindricalFunction::new(vectors(directions, dim)?, Arc::new(f) as Arc<dyn SmoothFn>)?, x)
        }
        FunctionSpec::Family { name, directions, seed, x } => {
            (family(name, vectors(directions, dim)?, seed.unwrap_or(default_seed))?, x)
        }
    };
    if x.len() != dim {
        bail!("x has {} entries but the model has dimension {dim}", x.len());
    }
    Ok((phi, DVector::from_vec(x.clone())))
}

fn check(
    source: String,
    model: &GeneratorModel,
    phi: &CylindricalFunction,
    x: &DVector<f64>,
    cfg: &GeneratorConfig,
) -> Result<CaseReport> {
    let report = generator_check(model, phi, x, &cfg.deltas)?;
    let lambda_values = cfg
        .lambdas
        .iter()
        .map(|&l| apply_generator(&model.with_lambda(l)?, phi, x).map_err(Into::into))
        .collect::<Result<Vec<f64>>>()?;
    let spread = lambda_values
        .iter()
        .map(|v| (v - report.generator).abs())
        .fold(0.0, f64::max);
    let scale = report.generator.abs().max(1.0);
    let residual_ok = match cfg.tol {
        Some(t) => report.residuals.last().is_some_and(|r| *r < t),
        None => true,
    };
    let pass = report.pass && residual_ok && spread <= cfg.lambda_tol * scale;
    Ok(CaseReport { source, report, lambda_values, lambda_spread: spread, pass })
}

pub fn run(common: &Common) -> Result<Outcome> {
    let mut cfg: GeneratorConfig = config::load(common)?;
    let model = config::resolve_model(&mut cfg.model, &mut cfg.model_path)?;
    if cfg.functions.is_empty() && cfg.corpus_seeds.is_empty() {
        bail!("nothing to check: give \"functions\" or \"corpus_seeds\"");
    }
    let out = config::out_dir(&cfg.out)?.to_path_buf();

    let mut cases = Vec::new();
    for (i, spec) in cfg.functions.iter().enumerate() {
        let (phi, x) = build(spec, model.dim(), cfg.seed.wrapping_add(i as u64))?;
        cases.push(check(format!("functions[{i}]"), &model, &phi, &x, &cfg)?);
    }
    for &s in &cfg.corpus_seeds {
        let case = corpus_case(s)?;
        for (phi, x) in &case.cases {
            cases.push(check(format!("corpus[{s}]"), &case.model, phi, x, &cfg)?);
        }
    }
    let pass = cases.iter().all(|c| c.pass);
    let n_fail = cases.iter().filter(|c| !c.pass).count();
    let worst_final = cases.iter().filter_map(|c| c.report.residuals.last().copied()).fold(0.0, f64::max);
    let report = Report { deltas: cfg.deltas.clone(), final_residual_tol: cfg.tol, lambda_tol: cfg.lambda_tol, cases, pass };

    let mut dir = OutDir::create(&out)?;
    dir.write_json("generator.json", &report)?;
    let outcome = Outcome {
        pass,
        summary: format!(
            "generator: {} cases, {} failing; worst final residual {:e} {}",
            report.cases.len(),
            n_fail,
            worst_final,
            if pass { "pass" } else { "FAIL" }
        ),
    };
    dir.finish("generator", &cfg, &outcome)?;
    Ok(outcome)
}
