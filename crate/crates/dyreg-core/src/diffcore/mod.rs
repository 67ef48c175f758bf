//! Reverse-mode differentiation engine: tensors, the recording tape, named
//! parameters, the gradient-check harness and the optimizer.

mod gradcheck;
mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, rel_error};
pub use nn::{gru_cell, linear, register_gru, scale_shift, GruVars};
pub use optim::Sgd;
pub use params::{Binding, Gradients, Initializer, ParamStore};
pub use tape::{concat_cols, cross_entropy, stack, Tape, Var};
pub use tensor::{Real, Tensor};
