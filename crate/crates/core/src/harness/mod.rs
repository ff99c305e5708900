//! Experiment orchestration: instance generation, trials, sweeps and result files.

mod generate;
mod iid;
mod persist;
mod spec;
mod stats;
mod sweep;
mod trial;

pub use generate::{generate_features, generate_instance, generate_mdp, generate_parts, GeneratedParts, GeneratorParams};
pub use iid::{iid_scalar_validation, iid_second_moment, IidPoint, IidReport};
pub use persist::{load, persist, CHECKPOINTS_FILE, METADATA_FILE, RESULTS_FILE, SUMMARY_FILE};
pub use spec::{
    apply_override, spec_with_overrides, Cell, ExperimentSpec, Grid, InstanceFiles, InstanceSpec, SyncRule,
    SyncRuleName, DEFAULT_SPEC_JSON,
};
pub use stats::{linear_fit, log_log_fit, mean_se, spearman, LinearFit};
pub use sweep::{
    k_curves, speedup_fits, summarize_cell, sweep, sweep_instance, CellSummary, KCurve, RunMetadata, SpeedupFit,
    SweepOutput, SweepResult,
};
pub use trial::{cell_output_c, run_trial, TrialOptions, TrialResult, TrialStatus};
