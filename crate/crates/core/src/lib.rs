//! Gaussian sampling for large linear inverse problems.
//!
//! The crate draws from `N(mu, Q^-1)` when the precision `Q = F^t F` is only
//! available through matrix-free products. Three perturbation-optimization
//! kernels are provided:
//!
//! * exact (`epo_step`): perturb the potential, solve `Q x = eta` exactly;
//! * truncated (`tpo_step`): stop conjugate gradient early and always accept;
//! * reversible jump (`rjpo_step`): stop early, start CG from `-previous`,
//!   and correct with an accept/reject step whose probability only needs the
//!   final CG residual.
//!
//! The truncation threshold can be tuned online by the Robbins-Monro
//! controllers in [`adapt`], and chain quality is measured with [`diag`].
//!
//! The crate is `no_std` and only needs `alloc`. FFT-backed operators, file
//! formats and the command-line front end live in the `rjpo` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adapt;
pub mod cg;
pub mod diag;
pub mod error;
pub mod linop;
pub mod rng;
pub mod sampler;
pub mod toy;
pub mod vecops;

pub use error::{Error, Result};
