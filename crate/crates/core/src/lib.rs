//! Dynamic latent space model for directed networks.
//!
//! Binary directed networks observed over time are modelled through a
//! logistic link on a linear predictor made of a time-varying intercept,
//! covariate effects, additive sender/receiver effects and multiplicative
//! (inner-product) latent factors, all with Gaussian process priors. The
//! posterior is explored with a Polya-Gamma augmented Gibbs sampler.
//!
//! Module map:
//! - [`kernels`]: squared-exponential GP covariances, jittered Cholesky, MVN draws.
//! - [`polya_gamma`]: exact PG(1, z) sampler.
//! - [`model`]: data containers, linear predictor, likelihood, SVD factor split.
//! - [`sampler`]: the Gibbs steps and chain driver.
//! - [`simulate`]: synthetic generators and holdout masks.
//! - [`evaluate`]: AUC, HPD, ESS, temporal reciprocity, scoring.
//! - [`cli_io`]: ingestion, config files, binary containers, command driver.
//! - [`experiments`]: named replication runs and sensitivity grids.

pub mod cli_io;
pub mod error;
pub mod evaluate;
pub mod experiments;
pub mod kernels;
pub mod model;
pub mod polya_gamma;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
