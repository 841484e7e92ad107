//! MCMC for the fractional posterior under both priors.

mod chain;
mod dump;
mod mala;
mod summary;
mod targets;

pub use chain::{
    data_digest, factor_initial_state, factor_sweep, run_factor_chain, run_student_chain, split_seed,
    BlockDiagnostics, Chain, ChainDiagnostics, ChainStates, GammaNoise, MalaConfig, SweepNoise,
    SweepOutcome, TargetDescriptor,
};
pub use dump::{dump_chain, write_chain_csv, write_diagnostics_json};
pub use mala::{
    mala_proposal, mala_step, mala_step_with_noise, ula_step, ula_step_with_noise, DualAveraging,
    LocalMetric, LogTarget, MalaPoint, StepOutcome, MALA_TARGET_ACCEPT,
};
pub use summary::{
    batch_means, mean_of_matrices, posterior_functional, posterior_mean, FunctionalEstimate,
    PosteriorSummary, BATCH_COUNT,
};
pub use targets::{
    factor_joint_log_target, student_joint_log_target, FactorBlock, FactorBlockKind, LogGammaBlock,
    StudentTarget,
};
