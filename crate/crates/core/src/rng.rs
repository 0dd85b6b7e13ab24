//! Seeded deterministic randomness.
//!
//! All randomness in the crate flows from a single 64-bit seed, split into
//! named substreams so that, say, data generation and Monte-Carlo evaluation
//! never share a stream.

use rand::SeedableRng;

/// The generator used throughout: identical seed, identical stream.
pub type Rng = rand_chacha::ChaCha12Rng;

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for byte in label.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive an independent substream seed from a base seed and a label.
pub fn substream(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a(label))
}

/// Substream keyed by label and index, for per-observation generators.
pub fn substream_indexed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(substream(seed, label) ^ splitmix64(index))
}
