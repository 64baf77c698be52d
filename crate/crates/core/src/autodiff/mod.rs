//! Minimal reverse-mode differentiation for a fixed chain of dense layers,
//! plus the AdamW optimizer that trains it.

mod layers;
mod optim;
mod tensor;

pub use layers::{
    backward, forward, mlp_chain, validate_chain, ForwardCache, GeneratorParams, Gradients,
    LayerParams, LayerSpec, Mode, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM, DEFAULT_DROPOUT,
};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, AdamWState, CosineSchedule};
pub use tensor::Tensor2;
