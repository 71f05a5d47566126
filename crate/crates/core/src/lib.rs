//! Numerical laboratory for classifier-guided diffusion.
//!
//! The crate pairs an exponential-integrator guided sampler with exact
//! oracles (finite labeled point clouds, analytic classifier families) so
//! that the relationship between a classifier's cross-entropy error and the
//! error of its guidance vector can be measured rather than assumed.
//!
//! Modules, bottom-up:
//!
//! * [`schedule`]: Ornstein–Uhlenbeck coefficients and reverse-time grids.
//! * [`pointcloud`]: closed-form posteriors, scores and guidance for point clouds.
//! * [`counterexamples`]: high-frequency perturbed classifier and the sharpness family.
//! * [`logistic`]: noisy-covariate logistic world and Newton MLE.
//! * [`estimators`]: Monte Carlo KL / guidance-error estimators, quadrature, slope fits.
//! * [`sampler`]: guided reverse process and cluster statistics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counterexamples;
pub mod error;
pub mod estimators;
pub mod logistic;
pub mod pointcloud;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod table;

pub use error::{Error, Result};
pub use estimators::{ConditionalModel, Estimate};
pub use pointcloud::LabeledPointCloud;
pub use rng::SeededRng;
pub use sampler::SampleBatch;
pub use schedule::TimeGrid;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}
