//! Differentiable tensor core: autodiff tensors, transformer layers,
//! parameter sets with checkpointing, Adam, and gradient verification.

mod layers;
mod optim;
mod params;
mod tensor;

pub use layers::{
    layer_norm, linear, scaled_dot_attention, sinusoidal_pe, Activation, DecoderLayer, EncoderLayer,
    FeedForward, ForwardCtx, LayerConfig, LayerNorm, Linear, MultiHeadAttention,
};
pub use optim::{grad_check, Adam};
pub use params::{load_checkpoint, load_checkpoint_into, save_checkpoint, CheckpointMeta, ParamSet};
pub use tensor::{exclusive_prefix_sum_matrix, Tensor};
