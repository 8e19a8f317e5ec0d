//! Hybrid transformer / spiking neural network for detector event data, with
//! fixed-point deployment emulation and a MAC/latency profiler.

pub mod attention;
pub mod cli;
pub mod container;
pub mod dataset;
pub mod error;
pub mod model;
pub mod profiler;
pub mod quant;
pub mod snn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
