//! Per-sample stochastic masking for dense layers, with the numerical
//! machinery to train, check and compare it against classic baselines.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod regularizers;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::Tensor;
