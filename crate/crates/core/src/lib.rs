//! Causal inference with corrupted covariates.
//!
//! Covariates observed with measurement error, missing values,
//! discretization or privacy noise are cleaned by zero filling, rescaling
//! and principal component truncation. Error-in-variable regression and
//! balancing weights fit on the cleaned training fold feed a cross-fitted
//! doubly robust score, which gives a point estimate and a 95% interval.

// `!(x > 0.0)` is how NaN gets rejected along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clean;
pub mod cli;
pub mod corrupt;
pub mod data;
pub mod dict;
pub mod dr;
pub mod eiv;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
