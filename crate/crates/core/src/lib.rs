//! Conditional-expectation networks for explaining tabular regression models.
//!
//! A surrogate network is trained on randomly masked copies of the learning
//! data so that a single network evaluates `E[μ(X) | X_C = x_C]` for every
//! feature coalition `C`. Those conditional expectations drive conditional
//! SHAP decompositions, drop1/anova variable importance, marginal
//! conditional expectation plots and Shapley attributions of deviance loss.

pub mod cen;
pub mod data;
pub mod error;
pub mod explain;
pub mod nn;
pub mod shapley;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
