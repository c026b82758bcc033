//! Dense tensors, reverse-mode gradients, the optimizer and gradient checks.

mod autograd;
mod gradcheck;
pub mod kernels;
mod optim;
mod param;
mod tensor;

pub use autograd::{BackwardCtx, Bindings, Function, Gradients, Tape, Var};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, Offender};
pub use kernels::{conv2d, gelu, masked_softmax, matmul};
pub use optim::{adamw_step, AdamW, AdamWConfig, LrSchedule};
pub use param::{glob_match, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
