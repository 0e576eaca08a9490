//! Named, counter-based random streams.
//!
//! Every component draws from its own ChaCha8 stream whose key is derived from
//! `(seed, component label, index)`. Streams never share state, so adding a
//! consumer (an attack, a UE) cannot perturb the draws seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Derives an independent stream for `(seed, component, index)`.
pub fn stream(seed: u64, component: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((component.len() as u64).to_le_bytes());
    h.update(component.as_bytes());
    h.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Exponential variate with the given rate from a raw 64-bit draw.
pub fn exp_from_bits(bits: u64, rate: f64) -> f64 {
    -(1.0 - unit(bits)).ln() / rate
}
