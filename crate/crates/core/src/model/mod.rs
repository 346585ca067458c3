//! Desk-scale differentiable models with hand-derived gradients.

mod arch;
mod checkpoint;
pub(crate) mod layers;
mod loss;
mod params;

pub use arch::{
    forward, init_params, loss_and_grad, loss_value, predict, Arch, Batch, ForwardOutput, Hooks,
    LossGrad, Mode, ModelSpec,
};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::LossKind;
pub use params::{
    param_axpy, param_diff, param_norm_sq, partition_filter, sgd_step, sgd_step_in_place, Param,
    ParamSet, Partition,
};
