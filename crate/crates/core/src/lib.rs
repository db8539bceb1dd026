//! Measuring how far a log-concave density is from its Laplace approximation.
//!
//! The crate is organised around a [`targets::TargetDensity`] (an unnormalized
//! negative log-density with derivatives), its [`laplace::LaplaceApprox`] and the
//! whitened [`laplace::StandardizedTarget`] on which the approximation is the
//! standard normal. On top of that sit:
//!
//! - [`diagnostics`]: sampling approximations of `KL(g_LAP, f)` (half the KL
//!   variance, the radial log-Sobolev term, the variance of the directional ELBO
//!   and their sums), each with a Monte-Carlo standard error;
//! - [`taylor`]: the closed forms obtained from the standardized third and
//!   fourth derivative tensors at the mode;
//! - [`bounds`]: non-sampling quantities (third-derivative bound for logistic
//!   models, certified radial curvature, Pinsker and coverage intervals);
//! - [`reference`]: ground-truth KL through NUTS and importance sampling, plus
//!   one-dimensional quadrature oracles;
//! - [`experiments`]: the logistic sweep runner, CSV persistence and SVG plots.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod laplace;
pub mod reference;
pub mod stats;
pub mod taylor;
pub mod targets;

pub use error::{Error, Result};
