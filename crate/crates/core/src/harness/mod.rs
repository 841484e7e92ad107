//! Synthetic experiments, replicated runs, sweeps and reports.

pub mod config;
pub mod report;
pub mod run;
pub mod synth;

pub use config::{Auto, ExperimentConfig, PriorChoice, ResolvedPrior};
pub use report::{emit_replicated, emit_sweep, read_report_csv, summarize_rows, write_report_csv, ReportRow, REPORT_COLUMNS};
pub use run::{
    bound_checks, fit_loglog, make_setting, run_replicated, run_replication, run_single, run_sweep, median,
    ReplicatedResult, RunResult, Setting, SlopeEstimate, SweepPoint, SweepReport,
};
pub use synth::{generate_pi, generate_truth, sample_observations, PiSpec, Truth};
