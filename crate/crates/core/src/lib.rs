//! GFlowNet sampling of topology-constrained building-block assemblies.
//!
//! The crate trains a recurrent flow model with the trajectory-balance loss so
//! that complete assemblies are drawn with probability proportional to a
//! surface-area reward, and ships the analysis tools used to evaluate the
//! resulting candidate sets: average-minimum-distance crystal descriptors,
//! univariate regression with cross-validation, and capture metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are the double-precision instantiations used by the CLI.

pub mod analysis;
pub mod autodiff;
pub mod crystal;
pub mod dataset;
pub mod env;
pub mod flowmodel;
pub mod policy;
pub mod reward;
pub mod scalar;
pub mod trainer;

pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type FlowModel64 = flowmodel::FlowModel<f64>;
pub type FlowModel32 = flowmodel::FlowModel<f32>;
pub type Trajectory64 = env::Trajectory<f64>;

pub type PeriodicPointSet64 = crystal::PeriodicPointSet<f64>;
pub type TabularPolicy64 = analysis::TabularPolicy<f64>;
