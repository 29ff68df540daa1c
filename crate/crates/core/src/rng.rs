//! Seedable random streams: uniform, standard normal and Gamma variates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Name of the underlying generator, recorded in run metadata.
pub const GENERATOR_NAME: &str = "ChaCha12 (rand_chacha 0.9)";

/// One chain's source of randomness. Never shared across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    /// Independent stream `index` of the same seed, e.g. one per parallel chain.
    ///
    /// Streams share the key but use disjoint ChaCha nonces, so they never
    /// overlap. `derive(i)` is a pure function of `(seed, i)`.
    pub fn derive(&self, index: u64) -> Self {
        Self::with_stream(self.seed, index.wrapping_add(1))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.rng);
        }
    }

    pub fn standard_normal_vector(&mut self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::argument("standard_normal_vector needs n >= 1"));
        }
        let mut out = vec![0.0; n];
        self.fill_standard_normal(&mut out);
        Ok(out)
    }

    /// One Gamma draw in the shape-scale parametrization (mean `shape * scale`).
    pub fn gamma_draw(&mut self, shape: f64, scale: f64) -> Result<f64> {
        if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::argument(format!(
                "gamma_draw needs positive finite shape and scale, got ({shape}, {scale})"
            )));
        }
        let dist = Gamma::new(shape, scale).map_err(|e| Error::argument(format!("{e}")))?;
        Ok(dist.sample(&mut self.rng))
    }
}
