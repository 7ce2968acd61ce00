//! Reverse-mode automatic differentiation over dense `f32` tensors.

mod adam;
pub mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, Var};
pub use params::{network_of, ParamStore, Session};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
