//! Convolutional embedding network, its optimizer and checkpoint files.

mod checkpoint;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, save_checkpoint_with_head, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use network::{AsImage, EmbeddingNetwork, ForwardCache, NetworkConfig, Regularization, KERNEL, POOL, STRIDE};
pub use optim::OptimizerState;
pub use tensor::Tensor;
