//! A small, deterministic 64-bit network engine.
//!
//! `nnkit` supports a fixed menu of layers (dense, 2-D convolution,
//! nearest-neighbour upsampling, relu, sigmoid, flatten, reshape) with
//! hand-written backward passes, an Adam optimizer, a mini-batch training
//! loop with seeded shuffling, a finite-difference gradient checker and a
//! bit-exact checkpoint format.
//!
//! All tensors carry a leading batch axis. Per-sample shapes use CHW order
//! for images.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod layer;
mod linalg;
pub mod network;
pub mod par;
pub mod tensor;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use error::NnError;
pub use gradcheck::{grad_check, GradCheck};
pub use layer::{Conv2d, Dense, Layer};
pub use network::{ForwardCache, Gradients, Network, NetworkBuilder};
pub use par::Parallelism;
pub use tensor::Tensor;
pub use train::{
    epoch_permutation, mse, predict_rows, train, PairSource, SampleSource, TrainConfig, TrainReport,
};

pub type Result<T> = std::result::Result<T, NnError>;
