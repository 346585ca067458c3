//! Federated aggregation and personalisation algorithms over a common
//! round interface.

mod aggregate;
mod kind;
mod local;
mod state;

pub use aggregate::{fedadam_update, server_aggregate_fedavg, AdamMoments, Contribution, WEIGHT_SUM_TOL};
pub use kind::StrategyKind;
pub use local::{add_pull, epoch_batches, local_sgd, Ctx, LocalConfig, LocalRun, Objective, QuadraticObjective, StepOut};
pub use state::{
    local_finetune, pfedme_local, train_stream, ControlVariates, EvalModels, RoundStats, StrategyState, TRAINABLE,
};
