//! Dense f64 tensors, reverse-mode gradients and the fused ops the model needs.

pub mod activations;
pub mod checkpoint;
pub mod expm;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod param;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, Dtype};
pub use expm::{matexp, Generator};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{optimizer_step, AdamConfig, AdamState, StepInfo};
pub use param::{GradBuffer, ParamId, ParamStore, Parameter};
pub use tape::{CustomOp, Graph, NodeId, Unary};
pub use tensor::Tensor;
