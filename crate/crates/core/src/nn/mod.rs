//! Minimal CPU neural-network substrate: dense tensors, direct convolution
//! kernels with hand-written backward passes, normalization layers, Adam,
//! and a named-tensor checkpoint format.
//!
//! Forward passes on frozen parameters take `&self` and are safe to run
//! concurrently; training entry points take `&mut self` and are
//! single-writer. Every backward pass here is validated against central
//! finite differences in f64 (see the module tests).

pub mod adam;
pub mod checkpoint;
pub mod conv2d;
pub mod conv3d;
pub mod init;
pub mod norm2d;
pub mod ops;
pub mod param;
pub mod tensor;

pub use adam::Adam;
pub use checkpoint::{load_state, save_state, ParamKind, StateEntry};
pub use param::Param;
pub use tensor::Tensor;
