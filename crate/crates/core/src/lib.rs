//! Audio-visual sequence classification with two LSTM streams, projection
//! fusion and auxiliary per-stream heads, all trained with hand-derived BPTT.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{matmul, Tensor};
