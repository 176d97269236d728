//! Minimal deterministic neural-network substrate: dense `f64` tensors, a
//! reverse-mode tape, linear/MLP/GRU layers, Adam and gradient checking.

pub mod grad_check;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use grad_check::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{mse_loss, GruCell, Linear, Mlp};
pub use optim::{adam_step, Adam};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use tape::{cross_entropy, mse, softmax_rows, Rotation, Tape, Var};
pub use tensor::Tensor2;
