//! Dense arrays with tape-based reverse-mode differentiation, restricted to
//! the operations the volumetric networks and losses need.

mod adam;
pub mod checkpoint;
pub(crate) mod conv;
pub(crate) mod filter;
mod graph;
pub(crate) mod lncc;
mod param;
mod scalar;
mod tensor;

pub use adam::{Adam, AdamConfig, Moments};
pub use conv::{conv_output_size, conv_transpose_output_size};
pub use graph::{Gradients, Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::NdArray;
