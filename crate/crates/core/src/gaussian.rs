//! Finite-dimensional Gaussian measures and conditional-Gaussian regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, SymSpectrum, EPS_PSD};
use crate::rng::{self, StreamRng};

/// `N(mean, cov)` with a symmetric positive semidefinite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMeasure {
    /// Symmetrizes `cov` and checks it is PSD up to [`EPS_PSD`].
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Shape(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("mean has non-finite entries".into()));
        }
        let cov = linalg::checked_symmetric(&cov, "covariance")?;
        SymSpectrum::new(&cov)?.ensure_psd()?;
        Ok(Self { mean, cov })
    }

    /// Like [`GaussianMeasure::new`] but measures negativity against `scale`
    /// instead of the covariance's own spectrum, and clamps small negative
    /// eigenvalues to zero. Used for differences such as `C_Y − KᵀK` whose
    /// exact value may be zero.
    pub(crate) fn clamped(mean: DVector<f64>, cov: DMatrix<f64>, scale: f64) -> Result<Self> {
        let spec = SymSpectrum::new(&cov)?;
        let min = spec.min_value();
        if min < -EPS_PSD * scale.max(spec.max_abs_value()) {
            return Err(Error::NotPsd { min, max: spec.max_value() });
        }
        let cov = if min < 0.0 { spec.map(|s| s.max(0.0)) } else { linalg::symmetrize(&cov) };
        Ok(Self { mean, cov })
    }

    pub fn point_mass(at: DVector<f64>) -> Self {
        let n = at.len();
        Self { mean: at, cov: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn sampler(&self) -> Result<GaussianSampler> {
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            factor: psd_sqrt(&self.cov)?,
        })
    }
}

/// Draws `mean + S z` with `S = psd_sqrt(cov)` precomputed.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn draw(&self, rng: &mut StreamRng) -> DVector<f64> {
        let z = rng::standard_normal_vector(rng, self.mean.len());
        &self.mean + &self.factor * z
    }
}

/// Symmetric PSD square root by spectral decomposition. Eigenvalues below
/// `EPS_PSD · max` are clamped to zero.
pub fn psd_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let spec = SymSpectrum::new(c)?;
    spec.ensure_psd()?;
    let cut = EPS_PSD * spec.max_abs_value();
    Ok(spec.map(|s| if s > cut { s.sqrt() } else { 0.0 }))
}

/// `C^{-1/2}` on the numerical range of `C` (eigenvalues `σ ≥ rel_tol·σ_max`),
/// zero on its complement.
pub fn pseudo_inverse_sqrt(c: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let spec = SymSpectrum::new(c)?;
    spec.ensure_psd()?;
    let max = spec.max_value();
    if max <= 0.0 {
        return Ok(DMatrix::zeros(c.nrows(), c.ncols()));
    }
    let cut = rel_tol * max;
    Ok(spec.map(|s| if s >= cut && s > 0.0 { 1.0 / s.sqrt() } else { 0.0 }))
}

/// Joint law of `(X, Y)`; `c_xy = E[(X − m_X)(Y − m_Y)ᵀ]` is `N_X × N_Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    pub m_x: DVector<f64>,
    pub m_y: DVector<f64>,
    pub c_x: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
    pub c_xy: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(
        m_x: DVector<f64>,
        m_y: DVector<f64>,
        c_x: DMatrix<f64>,
        c_y: DMatrix<f64>,
        c_xy: DMatrix<f64>,
    ) -> Result<Self> {
        let (nx, ny) = (m_x.len(), m_y.len());
        if c_x.shape() != (nx, nx) || c_y.shape() != (ny, ny) || c_xy.shape() != (nx, ny) {
            return Err(Error::Shape(format!(
                "joint blocks do not match N_X={nx}, N_Y={ny}: C_X {:?}, C_Y {:?}, C_XY {:?}",
                c_x.shape(),
                c_y.shape(),
                c_xy.shape()
            )));
        }
        let c_x = linalg::checked_symmetric(&c_x, "C_X")?;
        let c_y = linalg::checked_symmetric(&c_y, "C_Y")?;
        let joint = Self { m_x, m_y, c_x, c_y, c_xy };
        SymSpectrum::new(&joint.block_covariance())?.ensure_psd()?;
        Ok(joint)
    }

    /// Joint law of `(X, Y)` where `Y = T X + c + noise`, noise independent
    /// of `X` with covariance `noise_cov`.
    pub fn from_linear_model(
        x: &GaussianMeasure,
        t: &DMatrix<f64>,
        c: &DVector<f64>,
        noise_cov: &DMatrix<f64>,
    ) -> Result<Self> {
        let pushed = affine_pushforward(x, t, c)?;
        let c_xy = x.cov() * t.transpose();
        Self::new(
            x.mean().clone(),
            pushed.mean().clone(),
            x.cov().clone(),
            pushed.cov() + noise_cov,
            c_xy,
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m_x.len(), self.m_y.len())
    }

    /// `[[C_X, C_XY], [C_XYᵀ, C_Y]]`.
    pub fn block_covariance(&self) -> DMatrix<f64> {
        let (nx, ny) = self.dims();
        let mut full = DMatrix::zeros(nx + ny, nx + ny);
        full.view_mut((0, 0), (nx, nx)).copy_from(&self.c_x);
        full.view_mut((nx, nx), (ny, ny)).copy_from(&self.c_y);
        full.view_mut((0, nx), (nx, ny)).copy_from(&self.c_xy);
        full.view_mut((nx, 0), (ny, nx)).copy_from(&self.c_xy.transpose());
        full
    }

    pub fn marginal_x(&self) -> GaussianMeasure {
        GaussianMeasure { mean: self.m_x.clone(), cov: self.c_x.clone() }
    }

    pub fn as_measure(&self) -> GaussianMeasure {
        GaussianMeasure {
            mean: DVector::from_iterator(
                self.m_x.len() + self.m_y.len(),
                self.m_x.iter().chain(self.m_y.iter()).copied(),
            ),
            cov: self.block_covariance(),
        }
    }
}

/// Regression operator `K = C_X^{-1/2} C_XY` with the range-condition residual.
#[derive(Debug, Clone)]
pub struct Regression {
    pub k: DMatrix<f64>,
    pub k_t: DMatrix<f64>,
    /// `C_X^{-1/2}` on the numerical range.
    pub c_x_inv_sqrt: DMatrix<f64>,
    /// `‖(I − P_ran) C_XY‖_F`.
    pub range_residual: f64,
    pub range_tol: f64,
}

pub fn regression_operator(j: &JointGaussian, rel_tol: f64) -> Result<Regression> {
    let spec = SymSpectrum::new(&j.c_x)?;
    let c_x_inv_sqrt = pseudo_inverse_sqrt(&j.c_x, rel_tol)?;
    let projector = spec.range_projector(rel_tol);
    let nx = j.m_x.len();
    let outside = (DMatrix::<f64>::identity(nx, nx) - projector) * &j.c_xy;
    let range_residual = outside.norm();
    // A genuine joint law has |vᵀ C_XY| ≤ sqrt(σ_v ‖C_Y‖) along each discarded
    // eigenvector v, and discarded σ_v < rel_tol·σ_max.
    let c_y_scale = SymSpectrum::new(&j.c_y)?.max_abs_value();
    let range_tol = 10.0 * (rel_tol * spec.max_abs_value() * c_y_scale * nx as f64).sqrt()
        + 1e-14 * j.c_xy.norm();
    if range_residual > range_tol {
        return Err(Error::InconsistentJoint { residual: range_residual, tol: range_tol });
    }
    let k = &c_x_inv_sqrt * &j.c_xy;
    let k_t = k.transpose();
    Ok(Regression { k, k_t, c_x_inv_sqrt, range_residual, range_tol })
}

/// Law of `Y` given `X = x_obs`: mean `m_Y + Kᵀ C_X^{-1/2}(x_obs − m_X)`,
/// covariance `C_Y − KᵀK`.
pub fn conditional(j: &JointGaussian, x_obs: &DVector<f64>, rel_tol: f64) -> Result<GaussianMeasure> {
    if x_obs.len() != j.m_x.len() {
        return Err(Error::Shape(format!(
            "observation has length {}, expected {}",
            x_obs.len(),
            j.m_x.len()
        )));
    }
    let reg = regression_operator(j, rel_tol)?;
    let mean = &j.m_y + &reg.k_t * (&reg.c_x_inv_sqrt * (x_obs - &j.m_x));
    let cov = &j.c_y - &reg.k_t * &reg.k;
    let scale = SymSpectrum::new(&j.c_y)?.max_abs_value();
    GaussianMeasure::clamped(mean, cov, scale)
}

/// Law of `T X + c` for `X ~ μ`.
pub fn affine_pushforward(mu: &GaussianMeasure, t: &DMatrix<f64>, c: &DVector<f64>) -> Result<GaussianMeasure> {
    if t.ncols() != mu.dim() || t.nrows() != c.len() {
        return Err(Error::Shape(format!(
            "map is {}x{}, offset has length {}, measure has dimension {}",
            t.nrows(),
            t.ncols(),
            c.len(),
            mu.dim()
        )));
    }
    let mean = t * &mu.mean + c;
    let cov = linalg::symmetrize(&(t * &mu.cov * t.transpose()));
    Ok(GaussianMeasure { mean, cov })
}

/// Law of `X₁ + X₂` for independent `X₁ ~ μ₁`, `X₂ ~ μ₂`.
pub fn convolve(mu1: &GaussianMeasure, mu2: &GaussianMeasure) -> Result<GaussianMeasure> {
    if mu1.dim() != mu2.dim() {
        return Err(Error::Shape(format!(
            "cannot convolve dimensions {} and {}",
            mu1.dim(),
            mu2.dim()
        )));
    }
    Ok(GaussianMeasure {
        mean: &mu1.mean + &mu2.mean,
        cov: &mu1.cov + &mu2.cov,
    })
}

/// `n` independent draws from `μ`, reproducible from `seed`.
pub fn sample(mu: &GaussianMeasure, seed: u64, n: usize) -> Result<Vec<DVector<f64>>> {
    let sampler = mu.sampler()?;
    let mut rng = rng::stream_rng(seed, 0);
    Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
}
