//! Spline continued fraction regression and its benchmark harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cfr;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod output;
pub mod report;
pub mod solver;
pub mod spline_basis;

pub use error::{Error, Result};
