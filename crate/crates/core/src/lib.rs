//! Constrained M-estimation and U-estimation with convex losses.
//!
//! The crate provides:
//!
//! * [`metric`]: SPD scalar products `<x, y>_S` and the isometry reducing
//!   the S-geometry to the Euclidean one;
//! * [`geometry`]: convex constraint sets, metric projections, support and
//!   normal cones, and directional derivatives of projections;
//! * [`losses`] and [`ustat`]: convex losses and U-statistic kernels with
//!   deterministic subgradient selections;
//! * [`solver`]: projected subgradient minimization with a probe-based
//!   first-order optimality certificate;
//! * [`asymptotics`]: the limiting distribution of constrained estimators
//!   (a directional derivative of a metric projection applied to a Gaussian)
//!   and support-function estimates of population subdifferentials;
//! * [`experiments`]: a seeded, deterministic Monte Carlo harness that
//!   checks consistency, exact recovery, and convergence in distribution
//!   against the sampled limit law with an energy-distance permutation test.

pub mod asymptotics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod losses;
pub mod metric;
pub mod seed;
pub mod solver;
pub mod ustat;

pub use error::{Error, Result};
pub use geometry::ConvexSet;
pub use metric::SpdMetric;
