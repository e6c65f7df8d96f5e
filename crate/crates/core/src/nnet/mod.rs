//! Numerics substrate: tensors, reverse-mode autodiff, the conditional MLP
//! denoiser and Adam.

pub mod adam;
pub mod autodiff;
pub mod model;
pub mod tensor;

pub use adam::{cosine_lr, AdamConfig, AdamState};
pub use autodiff::{Gradients, Graph, Var};
pub use model::{
    loss_and_gradients, time_features, Denoiser, DenoiserModel, ModelConfig, Parameterization,
};
pub use tensor::Tensor;
