//! Series ridge regression for spatial data observed at irregularly spaced
//! sites.
//!
//! The pipeline: draw or ingest sites ([`sampling`]), simulate data
//! ([`field`]), fit a tensor B-spline ridge estimator ([`estimator`]) and
//! attach HAC or sandwich standard errors ([`inference`]). [`experiments`]
//! runs Monte Carlo rate and coverage studies on top.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod field;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod neighbors;
pub mod points;
pub mod quadrature;
pub mod rng;
pub mod sampling;

pub use error::{Error, ModelKind, Result};
