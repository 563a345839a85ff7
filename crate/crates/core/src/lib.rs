//! Conditional motion diffusion transformer over facial motion parameter
//! sequences, with sampling and landmark metrics.

pub mod autograd;
pub mod cli;
pub mod datakit;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod index_map;
pub mod metrics;
pub mod motion;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
