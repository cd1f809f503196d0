//! Reverse-mode tensor graph for small volumetric networks.
//!
//! The graph is rebuilt per forward pass. Calling [`Graph::backward`] computes
//! gradients for every trainable leaf and then frees the scratch nodes it
//! created; calling [`Graph::grad`] instead *keeps* the gradient nodes in the
//! graph, so the returned value is itself differentiable. That retained mode is
//! what makes gradient-penalty style losses (derivative of a gradient norm with
//! respect to the parameters) work without a second engine.
//!
//! Kernels run on plain row-major buffers. Convolutions lower to im2col plus a
//! GEMM (`matrixmultiply`), which is where essentially all training time goes.
//! Everything is sequential with a fixed reduction order, so identical seeds
//! give bit-identical results on any thread count.

mod adam;
mod error;
mod graph;
mod init;
mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::TensorError;
pub use graph::{Graph, GradientMap, Var};
pub use init::xavier_uniform;
pub use kernels::{ConvGeom, ConvSpec, Padding};
pub use tensor::{Element, Tensor};
