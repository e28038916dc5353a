//! Quantile regression by majorization-minimization.
//!
//! The crate covers separate per-level fits of the perturbed check loss,
//! simultaneous fits of whole coefficient functions `β(q) = A b(q)` over a
//! quantile grid, adaptive-lasso selection, natural-spline covariate
//! transforms with cross-validation, a double-kernel nonparametric baseline,
//! and the simulation harness used to compare them.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod covariate;
pub mod dist;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod loss;
pub mod penalized;
pub mod separate;
pub mod sim;
pub mod simultaneous;

pub use basis::{basis_matrix, coefficient_function, eval_basis, BasisSpec};
pub use error::{Error, Result};
pub use loss::{check_loss, perturbed_loss, surrogate_value, total_loss, Perturbation, QuantileLevel, ResidualVector};
pub use penalized::{adaptive_weights, bic, fit_penalized, select_lambda, sigma_mle, PenaltyConfig, PenalizedFit};
pub use separate::{fit_quantile, mm_step, Dataset, FitConfig, Init, QuantileFit};
pub use simultaneous::{fit_simultaneous, mm_step_simultaneous, ParamMatrix, QuantileGrid, SimultaneousFit};
