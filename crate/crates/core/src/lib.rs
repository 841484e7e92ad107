//! One-bit matrix completion with fractional posteriors.
//!
//! * [`model`]: logistic observation model, data and fractional likelihood.
//! * [`priors`]: the factorization prior and the spectral Student prior.
//! * [`samplers`]: Langevin MCMC and posterior summaries.
//! * [`metrics`]: Bernoulli divergences and distance measures.
//! * [`bounds`]: rate formulas, constants and concentration bookkeeping.
//! * [`harness`]: synthetic experiments and reports.

pub mod bounds;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod priors;
pub mod samplers;

pub use error::{Error, Result};
pub use model::{
    EntryCounts, FractionalExponent, MatrixParam, Observation, ObservationSet, SamplingDistribution,
};
pub use priors::{FactorPriorConfig, FactorState, GammaFamily, StudentPriorConfig, TruthSpec};
pub use samplers::{Chain, MalaConfig, PosteriorSummary};
