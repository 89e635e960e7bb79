//! Deterministic seed derivation.
//!
//! Every random stream in the toolkit comes from a `ChaCha8Rng` seeded with a
//! `u64` derived from a master seed and a small set of labels. Derivation is a
//! SplitMix64 fold, so it is stable across platforms and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a label string into a seed.
pub fn mix_str(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(splitmix(seed ^ 0x5bd1_e995), |acc, b| splitmix(acc ^ u64::from(b)))
}

pub fn mix_u64(seed: u64, value: u64) -> u64 {
    splitmix(splitmix(seed) ^ value)
}

/// Seed for one experiment cell stream: `hash(master, rho, label)`.
pub fn cell_seed(master: u64, rho: f64, label: &str) -> u64 {
    mix_str(mix_u64(master, rho.to_bits()), label)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
