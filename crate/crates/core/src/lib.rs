//! Photonic transposed-convolution GAN accelerator model.

pub mod arch;
pub mod devices;
pub mod dse;
pub mod error;
pub mod exec;
pub mod ir;
pub mod numerics;
pub mod perf;
pub mod report;
pub mod schedule;
pub mod sparse;

pub use error::{Error, Location, Result};
