//! Numerical kernel for semistable linear systems.
//!
//! A matrix is *semistable* when its zero eigenvalues are semisimple and every
//! other eigenvalue has strictly negative real part. Power-system state
//! matrices carry exactly one structural zero mode (power conservation), so
//! the classical reachability Gramian integral diverges unless the dynamics
//! are first projected onto the stable eigenspace. This module provides that
//! projection, a dense Lyapunov solver, the projected Gramian, a pivoted
//! Cholesky factorization for the (always singular) result, and a slow
//! quadrature oracle used to cross-check the algebraic route.

mod decomp;
mod gramian;
mod lyapunov;
mod quadrature;

pub use decomp::{decompose_semistable, SemistableDecomposition};
pub use gramian::{gramian_hurwitz, output_energy, psd_factor, semistable_gramian, Gramian};
pub use lyapunov::{real_schur, solve_lyapunov};
pub use quadrature::{expm, oracle_gramian_quadrature};

use thiserror::Error;

/// Errors produced by the matrix kernel.
#[derive(Debug, Error)]
pub enum MatError {
    #[error("matrix is not semistable: {0}")]
    NotSemistable(String),

    #[error("zero eigenvalue is defective (geometric multiplicity {geometric} < algebraic {algebraic})")]
    DefectiveZeroEigenvalue { geometric: usize, algebraic: usize },

    #[error("matrix is not Hurwitz (max eigenvalue real part {max_re:.3e})")]
    NotHurwitz { max_re: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("quadrature horizon too short: integrand tail ratio {tail_ratio:.3e}")]
    HorizonTooShort { tail_ratio: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linear algebra backend: {0}")]
    Backend(#[from] ndarray_linalg::error::LinalgError),
}

pub type Result<T> = std::result::Result<T, MatError>;
