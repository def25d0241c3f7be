//! Hand-rolled neural-network plumbing: parameters with Adam state and
//! touch instrumentation, fully-connected and convolutional layers with
//! explicit backward passes, and the loss functions used by the training
//! loops.
//!
//! Everything is f32 with f64 loss accumulation. Gradient flow is explicit:
//! a backward pass only visits the layers the caller walks, which is what
//! makes partial-depth replay and its instrumentation exact rather than
//! approximate.

pub mod conv;
pub mod functional;
pub mod init;
pub mod linear;
pub mod param;

pub use conv::Conv2d;
pub use linear::Linear;
pub use param::{Adam, Param, ParamKind};
