//! Variational inference for truncated stable Levy-driven SDEs via neural
//! exponential tilting.
//!
//! The crate simulates truncated symmetric alpha-stable jump processes,
//! trains a quadratic neural tilting posterior by maximizing a Monte Carlo
//! ELBO, and scores probabilistic forecasts against a Gaussian-SDE baseline.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`stable`] | prior jump law, inverse-CDF sampling, ground-truth simulator |
//! | [`tilting`] | quadratic tilt factors, conditional Gaussians, rejection envelope |
//! | [`sampler`] | exact mixing-scale rejection sampler and tilted path simulation |
//! | [`kl`] | jump-cost KL estimators (Monte Carlo, quadrature, gamma series) |
//! | [`neural`] | temporal encoder, tilt heads, drifts, gradient engine |
//! | [`training`] | ELBO assembly, optimizer protocol, Gaussian baseline |
//! | [`evaluation`] | CRPS, jump CRPS, energy score, reliability, recovery error |
//! | [`io`] | CSV/JSON schemas, rolling windows, run artifacts |

pub mod error;
pub mod evaluation;
pub mod io;
pub mod kl;
pub mod neural;
pub mod quad;
pub mod rng;
pub mod sampler;
pub mod special;
pub mod stable;
pub mod stats;
pub mod tilting;
pub mod training;

pub use error::{Error, Result};
