//! Dense-matrix neural networks: graph-convolution layers, mean pooling over
//! nodes, a dense head, exact reverse-mode gradients and plain gradient descent.

mod gradcheck;
mod network;
mod tensor;

pub use gradcheck::{
    grad_check, random_graph, random_network_check, random_tensor, relative_error, NetKind,
    GRAD_CHECK_STEP, KINK_MARGIN,
};
pub use network::{
    load_checkpoint, save_checkpoint, Activation, DenseLayer, ForwardCache, GcnLayer, Gradients,
    InitScheme, Network, NetworkShape, CHECKPOINT_VERSION,
};
pub use tensor::Tensor2;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
