//! Gauss–Markov families at finite Galerkin truncation.
//!
//! A linear SDE `dZ = (AZ + b) dt + Q^{1/2} dW` on `R^N` has Gaussian
//! transition kernels `N(m(t, x), Q(t))`. This crate builds those kernels from
//! the triple `(A, b, Q)`, samples the process, recovers the triple from kernel
//! tables, and checks the structural identities that tie the two directions
//! together (semigroup and cocycle laws, covariance flow, the martingale part,
//! the generator on cylindrical functions). The [`boundary`] module carries the
//! half-line heat equation driven by white noise at the Dirichlet boundary.

pub mod boundary;
pub mod error;
pub mod gaussian;
pub mod generator;
pub mod identify;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod semigroup;
pub mod simulate;

pub use error::{Error, Result};
pub use gaussian::{GaussianMeasure, JointGaussian};
pub use model::GeneratorModel;
pub use semigroup::TransitionKernel;
