use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {min:e}, max eigenvalue {max:e})")]
    NotPsd { min: f64, max: f64 },

    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("inconsistent joint Gaussian: range residual {residual:e} exceeds {tol:e}")]
    InconsistentJoint { residual: f64, tol: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("rank-deficient probe set: rank {rank} < dimension {dim}")]
    RankDeficient { rank: usize, dim: usize },

    #[error(
        "matrix logarithm undefined: eigenvalue {re:e}{im:+e}i lies on the closed negative real axis; \
         sample the kernel at a smaller time step"
    )]
    LogBranch { re: f64, im: f64 },

    #[error("time grid lacks the dyadic pair (delta, 2*delta) near zero: {0}")]
    MissingDyadicPair(String),

    #[error("quadrature mode supports at most 3 directions, got {0}")]
    QuadratureDimension(usize),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
