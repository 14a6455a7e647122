//! Small CPU neural-network toolkit: NCHW tensors, layers with explicit
//! backward passes, SGD/Adam, and a binary checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod sequential;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use layers::{Layer, Mode, Param};
pub use optim::{Adam, Optimizer, Sgd, StepDecay};
pub use sequential::Sequential;
pub use tensor::Tensor;
