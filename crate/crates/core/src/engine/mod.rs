//! Experiment orchestration: federated rounds, baselines, evaluation
//! protocols, result tables and multi-seed suites.

mod config;
mod eval;
mod objective;
mod results;
mod run;
mod suite;

pub(crate) use config::hex;
pub use config::{check_budget_parity, BaselineKind, EvalConfig, ExperimentConfig, ModelConfig};
pub use eval::{evaluate_globally, evaluate_locally, predict_split, MetricRow, MetricSuite};
pub use objective::{gather_batch, ModelObjective};
pub use results::{rounds_to_jsonl, ResultRow, ResultTable, RoundRecord, POOLED};
pub use run::{
    check_divergence, run_baseline, run_experiment, run_experiment_on, run_federated, train_centralized, train_local_centralized,
    Prepared, RunOutput,
};
pub use suite::{
    mean_and_std, method_family, run_suite, run_tradeoff_suite, summarize, Best, Comparison, Failure, MethodFamily, SeedRecord,
    SuiteJob, SuiteSummary, SummaryEntry,
};
