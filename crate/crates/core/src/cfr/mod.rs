//! Continued fraction regression with additive spline terms.
//!
//! Depth 0 is an ordinary least-squares linear model on the normalized
//! target. Each later depth inverts the previous residuals (shifted to be
//! strictly positive) and fits an additive penalized spline model to them,
//! with knots accumulated at high-residual samples of alternating sign.

pub mod document;
mod fit;
mod knots;
mod model;

pub use fit::{auto_depth_truncate, choose_depth, fit, fit_traced, DepthTrace, FitConfig, FitTrace};
pub use knots::{compute_offset, select_knots};
pub use model::{
    guard_denominator, AdditiveSplineModel, CFracModel, DepthLayer, LayerModel, LinearModel,
};
