//! Robust simulation-based inference.
//!
//! Point estimation and confidence sets for parametric simulators that stay
//! valid under misspecification: density-ratio based discrepancy estimators
//! (Hellinger, power divergence, MMD), relative-fit confidence sets,
//! classifier likelihoods with Monte Carlo test inversion, exponential-tilt
//! model expansion, simulation-based goodness of fit, varying-coefficient
//! model approximation and active exploration of the parameter space.

pub mod active;
pub mod approx;
pub mod density_ratio;
pub mod discrepancy;
pub mod error;
pub mod experiments;
pub mod gof;
pub mod grid;
pub mod intervals;
pub mod likelihood_sbi;
pub mod model_zoo;
pub mod projection;
pub mod relative_fit;
pub mod rng;
pub mod sample;
pub mod stats;
pub mod tilt;

pub use error::{Result, SbiError};
pub use sample::{Provenance, Sample};
