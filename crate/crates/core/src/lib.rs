//! Transformations of order one on Wiener space.
//!
//! A kernel `κ` on `[0,T]²` induces the Hilbert–Schmidt operator `B_κ` and the
//! path transformation `ι + F_κ`, whose change-of-variables weight is the
//! quadratic Wiener functional `q_{η(κ)}` with `η(κ) = −(κ + κ* + κ*κ)`.
//! This crate discretizes the kernels on a uniform grid, computes regularized
//! determinants, inverse and square-root kernels, and checks each
//! change-of-variables identity by Monte Carlo against closed-form oracles.

pub mod config;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod operator;
pub mod scenarios;
pub mod stats;
pub mod stochastic;
pub mod zoo;

pub use error::{Error, Result};
pub use grid::{make_grid, TimeGrid};
pub use kernel::{c_kernels, kappa_from_phi, MatrixKernel};
pub use operator::{assemble, Det2, HSMatrix, SpectralSummary};
pub use stats::MCEstimate;
pub use zoo::{kernel_zoo, KernelSpec};
