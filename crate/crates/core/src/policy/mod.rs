//! Neural feedback control: network, optimizer and pathwise gradients.

pub mod adam;
pub mod grad;
pub mod mlp;

pub use adam::{adam_step, lr_at, AdamState, LrSchedule};
pub use grad::{
    cost_and_grad_with_noise, cost_with_noise, gradient_check, relative_error,
    rollout_cost_and_grad, CostGradient, GradCheckEntry, GradCheckReport,
};
pub use mlp::{Activation, MlpPolicy, DEFAULT_HIDDEN, DEFAULT_HIDDEN_LAYERS};
