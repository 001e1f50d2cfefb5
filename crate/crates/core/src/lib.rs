//! Simulation, likelihood evaluation, maximum-likelihood fitting and
//! ergodicity diagnostics for partially observed Markov models.
//!
//! The crate covers three model families:
//!
//! * a hidden Markov model on the nonnegative half-line with a reflecting
//!   atom at zero, heavy-tailed state increments and Gaussian observations
//!   ([`hmm`]),
//! * the negative binomial integer-valued GARCH(1,1) count model ([`odm`]),
//! * the normal mixture GARCH(1,1) model with vector volatility ([`odm`]).
//!
//! On top of the model engines, [`estimate`] provides box-constrained
//! maximum-likelihood fitting, Kullback-Leibler profiles around a true
//! parameter and equivalence-class consistency experiments, while
//! [`ergodicity`] probes return-time tails and stationary moments of the
//! HMM state chain.
//!
//! All stochastic routines draw from explicit [`rng::RngStream`] values, so
//! every result is reproducible from a `(master_seed, path_id)` pair.

// Validation deliberately writes `!(x > 0.0)` instead of `x <= 0.0`: the
// negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimate;
pub mod ergodicity;
pub mod hmm;
pub mod logspace;
pub mod noise;
pub mod odm;
pub mod quad;
pub mod rng;

pub use error::{Error, Result};
pub use logspace::LogDensity;
pub use rng::RngStream;
