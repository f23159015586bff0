//! Minimal deterministic tensor engine with reverse-mode differentiation.
//!
//! Provides the layer set needed by the fusion architectures (dense, 2-d
//! convolution, relu, max-pooling, flatten), the Adam optimizer, and the
//! composite RMSE+MAE loss. Everything is `f64`, single-threaded per
//! training run, and bit-reproducible for a fixed seed.

mod adam;
mod layers;
mod loss;
mod network;
mod serialize;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use layers::{Conv2D, Dense, Layer};
pub use loss::composite_loss;
pub use network::{ForwardCache, Network};
pub use serialize::{read_params, write_params};
pub use tensor::Tensor;
