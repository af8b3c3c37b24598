//! Seed derivation. Every random draw in the pipeline comes from a ChaCha8
//! stream keyed by the global seed plus a purpose-specific stream id, so
//! results never depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a of `bytes`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for `(seed, label, index)`, e.g. `("step", 17)`.
pub fn labeled(seed: u64, label: &str, index: u64) -> Rng {
    stream(seed, fnv1a(label.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Generator for a named sample.
pub fn for_sample(seed: u64, sample_id: &str) -> Rng {
    stream(seed, fnv1a(sample_id.as_bytes()))
}
