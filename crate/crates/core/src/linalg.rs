//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance below which a symmetric matrix is treated
/// as positive semidefinite (and negative eigenvalues are clamped to zero).
pub const EPS_PSD: f64 = 1e-10;

/// Default relative cutoff for numerical rank and pseudo-inverses.
pub const DEFAULT_REL_TOL: f64 = 1e-12;

/// Relative asymmetry accepted before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

pub fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Row-major nested form used by the JSON file formats.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes `m` after checking that it is square and symmetric up to
/// [`SYMMETRY_TOL`] relative to its largest entry.
pub fn checked_symmetric(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    ensure_square(m, what)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("{what} has non-finite entries")));
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(symmetrize(m))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymSpectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymSpectrum {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let sym = checked_symmetric(m, "symmetric matrix")?;
        let eig = sym.symmetric_eigen();
        Ok(Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        })
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Fails unless every eigenvalue is at least `-EPS_PSD * max|eigenvalue|`.
    pub fn ensure_psd(&self) -> Result<()> {
        let scale = self.max_abs_value();
        let min = self.min_value();
        if min < -EPS_PSD * scale {
            return Err(Error::NotPsd {
                min,
                max: self.max_value(),
            });
        }
        Ok(())
    }

    /// `V diag(f(σ)) V^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    /// Orthogonal projector onto eigenvectors with `σ >= rel_tol * σ_max`.
    pub fn range_projector(&self, rel_tol: f64) -> DMatrix<f64> {
        let cut = rel_tol * self.max_value().max(0.0);
        let max = self.max_value();
        self.map(|s| if max > 0.0 && s >= cut { 1.0 } else { 0.0 })
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        let max = self.max_value();
        if max <= 0.0 {
            return 0;
        }
        self.values.iter().filter(|&&s| s >= rel_tol * max).count()
    }
}

/// Numerical rank of a symmetric PSD matrix.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    Ok(SymSpectrum::new(m)?.rank(rel_tol))
}

/// Largest real part over the eigenvalues of `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Minimal-norm least-squares solution of `X a = b` with a singular-value cutoff.
pub fn lstsq(x: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (rel_tol * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).map_err(|e| Error::Singular(e.to_string()))
}

/// Solves `A X + X A^T + C = 0` through the Kronecker system
/// `(I ⊗ A + A ⊗ I) vec(X) = -vec(C)`.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ensure_square(a, "A")?;
    let id = DMatrix::<f64>::identity(n, n);
    let op = id.kronecker(a) + a.kronecker(&id);
    let rhs = DVector::from_column_slice(c.as_slice()) * -1.0;
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator has eigenvalue pairs summing to zero".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Principal square root by the Denman–Beavers iteration.
pub fn sqrtm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ensure_square(m, "matrix")?;
    let mut y = m.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let y_inv = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("square-root iteration".into()))?;
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("square-root iteration".into()))?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let change = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if change <= 1e-15 * y.norm() {
            return Ok(y);
        }
    }
    Err(Error::Invalid("square-root iteration did not converge".into()))
}

/// Principal matrix logarithm via inverse scaling and squaring.
///
/// Square roots are taken until `‖X − I‖_F ≤ 1/4`, then
/// `log X = 2 atanh((X − I)(X + I)^{-1})` is summed as a power series.
pub fn logm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ensure_square(m, "matrix")?;
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    for z in m.complex_eigenvalues().iter() {
        if z.re <= 0.0 && z.im.abs() <= 1e-12 * scale {
            return Err(Error::LogBranch { re: z.re, im: z.im });
        }
    }
    let id = DMatrix::<f64>::identity(n, n);
    let mut x = m.clone();
    let mut squarings = 0_i32;
    while (&x - &id).norm() > 0.25 {
        if squarings >= 64 {
            return Err(Error::Invalid("matrix logarithm: too many square roots".into()));
        }
        x = sqrtm(&x)?;
        squarings += 1;
    }
    let denom = (&x + &id)
        .try_inverse()
        .ok_or_else(|| Error::Singular("X + I in logarithm series".into()))?;
    let y = (&x - &id) * denom;
    let y2 = &y * &y;
    let mut term = y.clone();
    let mut sum = y;
    for k in 1..200 {
        term = &term * &y2;
        let add = &term / (2 * k + 1) as f64;
        let size = add.norm();
        sum += add;
        if size <= 1e-18 * sum.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(sum * (2.0 * 2f64.powi(squarings)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logm_inverts_exp_for_rotation() {
        let skew = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let l = (&skew * 0.1).exp();
        let back = logm(&l).unwrap() / 0.1;
        assert!((back - skew).norm() < 1e-12);
    }

    #[test]
    fn logm_large_norm_uses_square_roots() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -0.5, -2.0, 1.0, 0.3, 0.0, -0.7]);
        let back = logm(&a.exp()).unwrap();
        assert!((back - a).norm() < 1e-10);
    }

    #[test]
    fn logm_rejects_negative_real_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        assert!(matches!(logm(&m), Err(Error::LogBranch { .. })));
    }

    #[test]
    fn lyapunov_scalar() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let c = DMatrix::from_element(1, 1, 2.0);
        let x = solve_lyapunov(&a, &c).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(checked_symmetric(&m, "m"), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn abscissa_of_rotation_generator() {
        let m = DMatrix::from_row_slice(2, 2, &[-0.5, -3.0, 3.0, -0.5]);
        assert_abs_diff_eq!(spectral_abscissa(&m), -0.5, epsilon = 1e-12);
    }
}
