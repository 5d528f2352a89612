//! Deterministic differentiable-computation core: tensors, a reverse-mode
//! tape, layers, losses, Adam and finite-difference checking.

pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck};
pub use nn::{bce_loss, mse_loss, Activation, Linear, Mlp, MlpSpec};
pub use optim::Adam;
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
