//! Dense numeric core: tensors, a reverse-mode differentiation tape,
//! the optimizer, gradient checking and the checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use gradcheck::{grad_check, worst_rel_error, ParamCheck};
pub use optim::{adam_step, clip_global_norm, AdamState, ParamStore, Parameter};
pub use rng::SeedRng;
pub use tape::{log_sigmoid, sigmoid, PoolMode, Tape, Var};
pub use tensor::Tensor;
