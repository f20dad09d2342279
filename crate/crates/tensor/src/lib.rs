//! Reverse-mode automatic differentiation engine for the tcodec networks.
//!
//! Tensors are flat row-major arrays carrying the operation that produced
//! them; [`backward`] replays the recorded operations in reverse topological
//! order. The production element type is `f32`; every op is also available
//! over `f64` for high-precision finite-difference checking.
//!
//! Determinism contract: identical seeds and inputs give bit-identical
//! forward values and gradients. Kernels may parallelize over output
//! elements but never change a reduction order.

mod element;
mod error;
mod graph;
mod kernels;
mod op;
mod sgd;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod gradcheck_specs;
pub mod init;
pub mod ops;

pub use element::Element;
pub use error::{CheckpointError, Result, TensorError};
pub use graph::{backward, trace, Graph, GraphNode};
pub use op::OpKind;
pub use sgd::{sgd_step, ParamSet, SgdState};
pub use tensor::{cast, Tensor};
