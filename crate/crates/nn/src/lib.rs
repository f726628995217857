//! A deliberately small neural-network kernel.
//!
//! Everything runs on `f64` and every layer carries a hand-written backward
//! pass. Layers own their parameters; anything that holds parameters
//! implements [`Module`] so optimizers, soft target updates and checkpoints
//! can walk them in a stable order.

mod error;
mod linalg;
mod tensor;

pub mod checkpoint;
pub mod graph;
pub mod init;
pub mod layers;
pub mod optim;
pub mod param;
pub mod softmax;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use error::{NnError, Result};
pub use graph::{GatLayer, GcnLayer, Graph};
pub use layers::{BatchNorm, Conv1d, Conv2d, Dense, Layer, MaxPool1d, MaxPool2d, Mode, Sequential};
pub use optim::Adam;
pub use param::{Module, Param};
pub use tensor::Tensor;

/// Negative slope used by LeakyReLU activations outside attention.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Negative slope used inside GAT attention scoring.
pub const ATTENTION_SLOPE: f64 = 0.2;
