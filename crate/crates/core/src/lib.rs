//! Forward-backward SDEs driven by compensated Poisson random measures with a
//! stable-like intensity.
//!
//! The crate is organised around the pipeline
//!
//! * [`levy_model`]: the intensity measure, its quadrature, the smooth cutoff
//!   used by the lent-particle calculus and jump sampling;
//! * [`forward_flow`]: jump-adapted Euler simulation of the forward SDE and its
//!   Jacobian flow, particle insertion and mark sensitivities;
//! * [`malliavin_weights`]: Bismut–Elworthy–Li weights built from per-jump
//!   contributions, with a brute-force mark-sampling oracle;
//! * [`bsde_engine`]: value-function Picard iteration for the backward equation;
//! * [`gradient_estimator`]: gradient of the value function by weights, finite
//!   differences and the variational equation;
//! * [`pde_solver`]: the nonlocal generator, a deterministic 1D solver,
//!   manufactured solutions and mollification.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bsde_engine;
pub mod error;
pub mod forward_flow;
pub mod gradient_estimator;
pub mod levy_model;
pub mod malliavin_weights;
pub mod models;
pub mod pde_solver;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

/// Column vector of the state dimension.
pub type Vector<const D: usize> = nalgebra::SVector<f64, D>;
/// Square matrix of the state dimension.
pub type Matrix<const D: usize> = nalgebra::SMatrix<f64, D, D>;
