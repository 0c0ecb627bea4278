//! Seeded random source used for weight initialisation and gradient-check
//! draws.
//!
//! The generator is ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`,
//! seeded through `seed_from_u64`). Uniform reals are formed from the top
//! 53 bits of each `u64` output, `lo + (hi - lo) · (bits >> 11) · 2⁻⁵³`, so
//! the stream of values is reproducible from the seed alone.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn uniform_vec(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.uniform(lo, hi)).collect()
    }
}
