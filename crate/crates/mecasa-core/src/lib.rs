//! MECASA: convolutional additive self-attention models for hybrid
//! EEG-fNIRS rest-vs-task classification, with the full preprocessing
//! pipeline, a training/evaluation harness, and attention complexity tools.

pub mod error;
pub mod tensor;

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod fusion;
pub mod signal;
pub mod train;

pub use error::{TensorError, TensorResult};
pub use tensor::Tensor;
