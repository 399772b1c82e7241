//! Tensors, reverse-mode differentiation, initialization and Adam.

mod adam;
mod init;
mod params;
mod simplex;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use init::glorot_init;
pub use params::{ParamGrads, ParamId, ParamStore};
pub use simplex::{project_with_support, simplex_jacobian_vjp, simplex_project};
pub use tape::{sigmoid, softmax, Gradients, Tape, Var, LOG_FLOOR};
pub use tensor::{dot, norm2, Tensor};
