//! Config loading: a JSON object from `--config`, with flags written over
//! the top-level `seed`, `out` and `tol` keys before typed parsing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gauss_markov::GeneratorModel;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::Common;

pub fn load<T: DeserializeOwned>(common: &Common) -> Result<T> {
    let mut doc = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => Value::Object(Map::new()),
    };
    let Value::Object(map) = &mut doc else {
        bail!("config must be a JSON object");
    };
    if let Some(seed) = common.seed {
        map.insert("seed".into(), seed.into());
    }
    if let Some(out) = &common.out {
        map.insert("out".into(), out.to_string_lossy().into_owned().into());
    }
    if let Some(tol) = common.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            bail!("--tol must be positive and finite, got {tol}");
        }
        map.insert("tol".into(), tol.into());
    }
    serde_json::from_value(doc).context("invalid config")
}

/// Output directory from the resolved config.
pub fn out_dir(out: &Option<PathBuf>) -> Result<&Path> {
    match out {
        Some(p) => Ok(p),
        None => bail!("no output directory: pass --out DIR or set \"out\" in the config"),
    }
}

/// Model given inline, through `model_path`, or the scalar reference model
/// `(A, b, Q, λ) = (−1, 1, 2, 1)`. A loaded file is stored inline so the
/// manifest is self-contained and can be rerun as a config.
pub fn resolve_model(model: &mut Option<GeneratorModel>, path: &mut Option<PathBuf>) -> Result<GeneratorModel> {
    if let Some(path) = path.take() {
        if model.is_some() {
            bail!("give either \"model\" or \"model_path\", not both");
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading model {}", path.display()))?;
        let m: GeneratorModel = serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
        *model = Some(m);
    }
    if model.is_none() {
        *model = Some(GeneratorModel::scalar(-1.0, 1.0, 2.0, Some(1.0))?);
    }
    Ok(model.clone().expect("set above"))
}

/// Starting state: zeros of the model dimension unless given.
pub fn state(x: &Option<Vec<f64>>, dim: usize, what: &str) -> Result<nalgebra::DVector<f64>> {
    match x {
        None => Ok(nalgebra::DVector::zeros(dim)),
        Some(v) if v.len() == dim => Ok(nalgebra::DVector::from_vec(v.clone())),
        Some(v) => bail!("{what} has {} entries but the model has dimension {dim}", v.len()),
    }
}
