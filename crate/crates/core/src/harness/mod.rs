//! Training loop, availability sweeps, cross-validated experiments and reports.

mod config;
mod experiment;
mod report;
mod train;

pub use config::{ExperimentConfig, SplitMode};
pub use experiment::{
    effective_split_mode, evaluate_sweep, plan_cells, prepare_dataset, run_ablation, run_experiment,
    run_experiment_with, substitute_noisy_text, Cell, NoisyScope, NoisyText, SweepPoint,
};
pub use report::{emit_report, mean_and_sample_std, Aggregate, EmittedReport, EvalReport, EvalRow, ReportMeta, RowKey};
pub use train::{
    epoch_batches, evaluate, records_batch, scores, steps_per_epoch, train, Scores, StepRecord, TrainOutcome,
};
