//! Image-scale sampling on top of `rjpo-core`: FFT circulant operators,
//! the super-resolution Gibbs sampler, file formats and the experiment
//! commands behind the `rjpo` binary.

pub mod circulant;
pub mod commands;
pub mod config;
pub mod error;
pub mod image;
pub mod output;
pub mod superres;

pub use error::{AppError, AppResult};
