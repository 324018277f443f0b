//! Numerical kernels shared by the fault-diagnosis and repetitive-control
//! layers: QR-based recursive least squares, a discrete Riccati solver,
//! pseudo-inversion, zero-order-hold discretization and averaged
//! periodogram spectra.
//!
//! Everything here is either a pure function or operates on caller-owned
//! state.

mod dare;
mod linalg;
mod psd;
mod rls;
mod ss;

pub use dare::{riccati_residual, solve_dare, DareSolution, DARE_MAX_ITER, DARE_TOL};
pub use linalg::{mat_power, pseudo_inverse, spectral_norm, spectral_radius};
pub use psd::{psd_estimate, Psd};
pub use rls::{QrRls, RLS_INIT_SCALE};
pub use ss::{discretize_second_order, discretize_zoh, StateSpaceModel};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("forgetting factor {0} outside (0, 1]")]
    Forgetting(f64),
    #[error("matrix R is not symmetric positive definite")]
    IndefiniteR,
    #[error("matrix Q is not symmetric positive semidefinite")]
    IndefiniteQ,
    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:e})")]
    DareNonConvergence { iterations: usize, residual: f64 },
    #[error("Riccati solution does not stabilize the loop (spectral radius {0})")]
    NotStabilizing(f64),
    #[error("matrix does not have full column rank")]
    RankDeficient,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },
}
