//! Reverse-mode automatic differentiation over `ndarray` tensors, sized for
//! image-to-image networks on CPU.
//!
//! The crate is generic over the element type ([`Scalar`]): training code
//! runs in `f32`, while gradient checks and numeric oracles instantiate the
//! identical graph in `f64`.

pub mod check;
pub mod container;
pub mod graph;
pub mod kernels;
pub mod param;
pub mod scalar;

pub use container::{read_container, write_container, ArrayData, ContainerError, Entry};
pub use graph::{Graph, TensorId};
pub use param::{collect_grads, Adam, Param, ParamStore};
pub use scalar::{Dtype, Scalar};
