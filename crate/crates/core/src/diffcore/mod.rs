//! Differentiable-computation substrate: tensors, the recording graph with
//! reverse-mode gradients and segment-level checkpointing, and Adam.

mod adam;
mod graph;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, Node, Segment};
pub use tensor::Tensor;
