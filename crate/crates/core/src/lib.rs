pub mod degrade;
pub mod error;
pub mod fourier;
pub mod fuse;
pub mod infer;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod volume;

pub use error::{Error, Result};
