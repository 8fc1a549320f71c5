//! Layers, the dual-head network, its losses, and the optimizer.

mod checkpoint;
mod config;
mod layers;
mod model;
mod optim;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{ModelConfig, FRAME_HEIGHT, FRAME_WIDTH};
pub use layers::{
    batch_norm, batch_norm_backward, check_lambda, combined_loss, cross_entropy,
    cross_entropy_grad, dense, dense_backward, dropout, leaky_relu, leaky_relu_backward,
    softmax_head, BnCache, BnParams, Mode,
};
pub(crate) use layers::{
    dense_backward_slice, dense_forward_slice, leaky, leaky_grad_from_output, softmax_rows,
};
pub use model::{
    argmax_rows, l2_penalty, model_backward, model_forward, predict, DenseParams, ForwardCache,
    ForwardOutput, Gradients, LossBreakdown, ModelParams,
};
pub use optim::{adam_step, lr_schedule, AdamHyper, AdamState};
