//! Robust geodesic regression on Riemannian manifolds.
//!
//! Supported spaces are the unit sphere S^n, the hyperboloid model of H^n,
//! Kendall's planar shape space and flat R^n. Responses are fitted along a
//! geodesic (or a geodesic submanifold for several covariates) under L2, L1,
//! Huber or Tukey-biweight loss.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod loss;
pub mod manifold;
pub mod regression;
pub mod rnormal;
pub mod shapes;
pub mod sim;
pub mod specfun;
pub mod tuning;
pub mod vecops;

pub use error::{Error, Result};
pub use loss::{LossKind, LossSpec};
pub use manifold::Manifold;
pub use regression::{Dataset, FitResult, GeodesicModel, GradientMode, Observation, SolverConfig};
