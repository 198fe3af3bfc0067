//! Coherent probabilistic forecast reconciliation by conditioning.
//!
//! Hierarchical forecasts are coherent when the upper series equal the
//! aggregates of the bottom series. This crate reconciles incoherent base
//! forecasts by conditioning the joint base distribution on the aggregation
//! constraints:
//!
//! - closed form for jointly Gaussian base forecasts ([`gaussian`]),
//! - importance sampling for count forecasts ([`importance`]),
//! - exact enumeration and closed-form analysis for finite discrete
//!   forecasts ([`analytic`]),
//! - a probabilistic scoring suite ([`scoring`]) and a score-driven count
//!   panel simulator ([`scoredriven`]) for end-to-end studies.
//!
//! All numerics are generic over the scalar type through [`scalar::Scalar`]
//! (f32 or f64); the `*64` aliases below pin the common choice.

pub mod analytic;
pub mod distributions;
pub mod error;
pub mod gaussian;
pub mod hierarchy;
pub mod importance;
pub mod scalar;
pub mod scoredriven;
pub mod scoring;

pub use error::{Error, Result};
pub use hierarchy::Hierarchy;
pub use scalar::Scalar;

/// f64 multivariate Gaussian forecast.
pub type MvGaussian64 = distributions::MvGaussian<f64>;
/// f64 count distribution.
pub type CountDistribution64 = distributions::CountDistribution<f64>;
/// f64 hierarchical base forecast.
pub type HierForecast64 = distributions::HierForecast<f64>;
/// f64 reconciled sample set.
pub type ReconciledSamples64 = importance::ReconciledSamples<f64>;
/// f64 reconciled pmf table.
pub type JointPmfTable64 = analytic::JointPmfTable<f64>;
/// f64 Gaussian reconciliation output.
pub type GaussianReconciliation64 = gaussian::GaussianReconciliation<f64>;
