//! Causal functional regression with per-curve monotone time warps.
//!
//! This crate fits the historical (causal) functional linear model
//!
//! ```text
//! y_i(w_i^{-1}(t)) ~ alpha(t) + integral beta(s, t) x_i(w_i(s)) ds,
//! beta(s, t) = 0 for s > t,
//! ```
//!
//! jointly with per-curve strictly increasing time warps `w_i`, by penalized
//! alternating least squares. It ships the pieces of that pipeline as
//! separate modules:
//!
//! - [`curves`]: grid-sampled smooth curves with cubic interpolation and
//!   L2 quadrature;
//! - [`basis`]: causal truncated tensor-product spline bases and the Gram
//!   penalty matrix;
//! - [`warp`]: monotone cubic Hermite warps via the Fritsch-Carlson
//!   construction and the Jupp transform;
//! - [`fit`]: the alternating ridge / warp estimator with effective degrees
//!   of freedom, AICC/GCV, and penalty selection;
//! - [`predict`]: registration of new covariates and response prediction;
//! - [`inference`]: asymptotic and bootstrap variance of the slope surface,
//!   significance filtering, and landmark statistics;
//! - [`simulate`]: synthetic data generators, error metrics, and a seeded
//!   Monte Carlo harness;
//! - [`io`] and [`app`]: file formats and the command-line entry points.
//!
//! The `examples/` directory contains one runnable walkthrough per major
//! capability; `cargo run --example fit_dynamic` is a good starting point.

pub mod app;
pub mod basis;
pub mod curves;
pub mod error;
pub mod fit;
pub mod inference;
pub mod io;
pub mod predict;
pub mod simulate;
pub mod warp;

pub use basis::{build_causal_basis, CausalBasis, SlopeCoefficients, UniSplineBasis};
pub use curves::{compose_warp, inner_product, l2_norm, Curve, CurveSample, TimeGrid};
pub use error::{Error, Result};
pub use warp::{KnotVector, WarpFn, WarpParams};
