//! Permutation tests for clustered data collected under rotating sampling
//! plans.
//!
//! The crate is organised around a [`RotatingPanelSample`]: the clustered
//! multi-occasion dataset in which `m` of the `n` clusters are replaced on
//! every occasion. On top of it sit
//!
//! * [`synth`]: generators for the normal, gamma and finite-population
//!   ("no-name") random-effect models,
//! * [`stats`]: cluster-blind t, Wilcoxon and empirical-quantile statistics,
//! * [`drm`]: density ratio model fits by composite empirical likelihood,
//!   fitted CDFs and quantiles, and the likelihood ratio statistic for equal
//!   percentiles,
//! * [`permute`]: the exchangeability-based permutation scheme and p-value,
//! * [`sim`]: the Monte Carlo harness, CSV ingestion and result tables.
//!
//! Numerical code is generic over the scalar type through [`Real`]; the
//! aliases at the crate root fix it to `f64`, which is what the harness and
//! the command line use.

#![allow(clippy::needless_range_loop)]
// `!(x > 0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod drm;
mod error;
mod linalg;
pub mod panel;
pub mod permute;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod synth;

use std::fmt::{Debug, Display};
use std::iter::Sum;

pub use error::{Error, Result};
pub use panel::{ClusterId, ClusterObservation, PlanConfig, RotatingPanelSample, Violation};

/// Floating point scalar used throughout the numerical code: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; every finite literal is representable
    /// (possibly rounded) in both supported types.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Sample = RotatingPanelSample<f64>;
pub type Observation = ClusterObservation<f64>;
pub type TwoSampleView = stats::TwoSampleView<f64>;
pub type DrmFit = drm::DrmFit<f64>;
pub type ConstrainedFit = drm::ConstrainedFit<f64>;
