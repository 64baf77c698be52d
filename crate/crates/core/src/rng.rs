//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit generator. The generator is
//! ChaCha20 (`rand_chacha::ChaCha20Rng`), a counter-based stream cipher with a
//! 64-bit seed expanded by `seed_from_u64` and a 64-bit stream selector.
//! Independent sub-streams are derived from `(seed, stream)` pairs so parallel
//! work stays reproducible regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Generator for sub-stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `rows * cols` i.i.d. N(0, 1) draws in row-major order.
pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols).map(|_| standard_normal(rng)).collect()
}

/// Uniform random permutation of `0..n` (Fisher-Yates).
pub fn permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
