//! Training, evaluation, ablation runs and the cost profiler.

mod ablation;
mod eval;
mod profile;
mod train;

pub use ablation::{format_ablation_table, run_ablations, AblationRow, AblationTable};
pub use eval::{evaluate, evaluate_parallel, ClassMetrics, EvalReport};
pub use profile::{format_profile, profile, profile_instrumented, ProfileReport, ProfileRow, PROFILE_SCOPES};
pub use train::{build_model, split_indices, train, EpochLog, TrainConfig, TrainOutcome};
