//! Per-pixel hyperspectral image classification with a four-block residual
//! 3D CNN, written from scratch: tensor kernels with hand-derived backward
//! passes, the network, SGD training, the stratified data protocol and the
//! confusion-matrix metrics.

pub mod cli;
pub mod data_io;
pub mod error;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
