//! Minimal dense tensors, reverse-mode differentiation and Adam.

pub mod graph;
pub mod optim;
pub mod tensor;

pub use graph::{Graph, ParamStore, Var};
pub use optim::{Adam, AdamConfig};
pub use tensor::Matrix;
