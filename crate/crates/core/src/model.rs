//! The generator triple `(A, b, Q)` and its JSON form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymSpectrum};

/// Linear SDE `dZ = (AZ + b_V) dt + Q^{1/2} dW` on `R^dim`.
///
/// `lambda` is a resolvent shift strictly to the right of the spectrum of
/// `A`; it only enters through `b_H = (λ − A)^{-1} b_V`, and every derived
/// quantity is independent of its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct GeneratorModel {
    a: DMatrix<f64>,
    b_v: DVector<f64>,
    q_diff: DMatrix<f64>,
    lambda: f64,
}

impl GeneratorModel {
    /// Validates the triple; `lambda = None` picks the default shift.
    pub fn new(a: DMatrix<f64>, b_v: DVector<f64>, q_diff: DMatrix<f64>, lambda: Option<f64>) -> Result<Self> {
        let n = linalg::ensure_square(&a, "A")?;
        if n == 0 {
            return Err(Error::Invalid("model dimension must be positive".into()));
        }
        if b_v.len() != n || q_diff.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "A is {n}x{n} but b_V has length {} and Q_diff is {}x{}",
                b_v.len(),
                q_diff.nrows(),
                q_diff.ncols()
            )));
        }
        if a.iter().chain(b_v.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("A and b_V must be finite".into()));
        }
        let q_diff = linalg::checked_symmetric(&q_diff, "Q_diff")?;
        SymSpectrum::new(&q_diff)?.ensure_psd()?;
        let lambda = match lambda {
            Some(l) => l,
            None => default_lambda(&a),
        };
        let abscissa = linalg::spectral_abscissa(&a);
        if !(lambda > 0.0 && lambda > abscissa && lambda.is_finite()) {
            return Err(Error::Invalid(format!(
                "lambda = {lambda} must be positive and exceed the spectral abscissa {abscissa} of A"
            )));
        }
        let shifted = DMatrix::<f64>::identity(n, n) * lambda - &a;
        let svd = shifted.svd(false, false);
        let smin = svd.singular_values.min();
        if smin <= 1e-14 * svd.singular_values.max() {
            return Err(Error::Singular("lambda I - A".into()));
        }
        Ok(Self { a, b_v, q_diff, lambda })
    }

    /// Scalar model `dZ = (aZ + b) dt + sqrt(q) dW`.
    pub fn scalar(a: f64, b: f64, q: f64, lambda: Option<f64>) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
            DMatrix::from_element(1, 1, q),
            lambda,
        )
    }

    pub fn dim(&self) -> usize {
        self.b_v.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_v(&self) -> &DVector<f64> {
        &self.b_v
    }

    pub fn q_diff(&self) -> &DMatrix<f64> {
        &self.q_diff
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same triple with a different resolvent shift.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.b_v.clone(), self.q_diff.clone(), Some(lambda))
    }

    /// `b_H = (λI − A)^{-1} b_V`.
    pub fn b_h(&self) -> Result<DVector<f64>> {
        let n = self.dim();
        let shifted = DMatrix::<f64>::identity(n, n) * self.lambda - &self.a;
        shifted
            .lu()
            .solve(&self.b_v)
            .ok_or_else(|| Error::Singular("lambda I - A".into()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `1 + max(0, largest eigenvalue of (A + Aᵀ)/2)`; the symmetric part's top
/// eigenvalue bounds every `Re σ(A)` from above.
pub fn default_lambda(a: &DMatrix<f64>) -> f64 {
    let sym = linalg::symmetrize(a);
    let top = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    1.0 + top.max(0.0)
}

/// Wire form: matrices are flat row-major arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    dim: usize,
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "b_V")]
    b_v: Vec<f64>,
    #[serde(rename = "Q_diff")]
    q_diff: Vec<f64>,
    lambda: f64,
}

impl From<GeneratorModel> for ModelFile {
    fn from(m: GeneratorModel) -> Self {
        let n = m.dim();
        Self {
            dim: n,
            a: m.a.transpose().as_slice().to_vec(),
            b_v: m.b_v.as_slice().to_vec(),
            q_diff: m.q_diff.transpose().as_slice().to_vec(),
            lambda: m.lambda,
        }
    }
}

impl TryFrom<ModelFile> for GeneratorModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let n = f.dim;
        if f.a.len() != n * n || f.q_diff.len() != n * n || f.b_v.len() != n {
            return Err(Error::Shape(format!(
                "model file with dim {n} needs {} entries in A and Q_diff and {n} in b_V",
                n * n
            )));
        }
        GeneratorModel::new(
            DMatrix::from_row_slice(n, n, &f.a),
            DVector::from_vec(f.b_v),
            DMatrix::from_row_slice(n, n, &f.q_diff),
            Some(f.lambda),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn b_h_scalar() {
        let m = GeneratorModel::scalar(-1.0, 1.0, 2.0, Some(1.0)).unwrap();
        assert_abs_diff_eq!(m.b_h().unwrap()[0], 0.5, epsilon = 1e-15);
        let z = GeneratorModel::scalar(-1.0, 0.0, 2.0, Some(1.0)).unwrap();
        assert_eq!(z.b_h().unwrap()[0], 0.0);
    }

    #[test]
    fn b_v_reconstructed_for_every_lambda() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, 0.2, -0.3]);
        let b = DVector::from_column_slice(&[1.0, -2.0]);
        let base = GeneratorModel::new(a.clone(), b.clone(), DMatrix::identity(2, 2), Some(1.0)).unwrap();
        for lambda in [1.0, 2.0, 10.0] {
            let m = base.with_lambda(lambda).unwrap();
            let back = (DMatrix::<f64>::identity(2, 2) * lambda - &a) * m.b_h().unwrap();
            assert!((back - &b).norm() < 1e-12);
        }
    }

    #[test]
    fn lambda_must_exceed_spectrum() {
        assert!(GeneratorModel::scalar(2.0, 0.0, 1.0, Some(1.0)).is_err());
        assert!(GeneratorModel::scalar(-1.0, 0.0, 1.0, Some(-0.5)).is_err());
        let m = GeneratorModel::scalar(2.0, 0.0, 1.0, None).unwrap();
        assert_eq!(m.lambda(), 3.0);
    }

    #[test]
    fn rejects_indefinite_diffusion() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GeneratorModel::new(DMatrix::zeros(2, 2), DVector::zeros(2), q, None).is_err());
    }

    #[test]
    fn json_layout_is_row_major() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]) * -0.1;
        let m = GeneratorModel::new(a, DVector::zeros(2), DMatrix::identity(2, 2), Some(1.0)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v["A"][1].as_f64().unwrap(), -0.2);
        assert_eq!(v["dim"], 2);
        assert!(GeneratorModel::from_json(r#"{"dim":2,"A":[1],"b_V":[0,0],"Q_diff":[1,0,0,1],"lambda":1}"#).is_err());
    }
}
