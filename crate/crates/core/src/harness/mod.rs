//! Configuration, evaluation statistics, plot-ready exports and the
//! command-line front end.

mod cli;
mod config;
mod eval;
mod export;
mod stats;

pub use cli::cli_dispatch;
pub use config::{DatasetConfig, EnvConfig, EvalConfig, OutputConfig, RunConfig, VaeConfig, RESOLVED_CONFIG};
pub use eval::{
    evaluate_actor, evaluate_policy, export_policy_field, mean_action_magnitude_near, policy_field, EvalReport, FieldRow,
    GridSpec, RolloutSummary, POLICY_FIELD_HEADER,
};
pub use export::{
    export_embeddings, export_generation_grid, reconstruction_mse_by_label, EMBEDDING_HEADER, GENERATION_GRID,
    GENERATION_HEADER, WIDE_EMBEDDING_HEADER,
};
pub use stats::{estimate_transition_probability, intervals_overlap, wilson_interval, TransitionEstimate, Z95};
