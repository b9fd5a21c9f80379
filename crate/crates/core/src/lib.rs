//! Few-shot modality classification with deep triplet embeddings.
//!
//! The pipeline samples center-weighted slices from volumes, embeds them
//! with a small convolutional network trained by batch-hard triplet loss,
//! projects the embeddings with PCA, clusters them with a full-covariance
//! Gaussian mixture and classifies volumes by majority vote over slices. The
//! mixture log-likelihood doubles as an out-of-sample gate. A softmax
//! classifier on the same backbone serves as the comparison baseline.

mod binio;
pub mod baseline;
pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod head;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod train;
pub mod triplet;
pub mod vote;

pub use error::{Error, Result};
pub use exec::Exec;
pub use linalg::Matrix;
pub use rng::Rng;
