//! Seed derivation.
//!
//! Every random stream in the pipeline is derived from the run's master seed
//! with [`mix64`], the SplitMix64 finalizer (increment `0x9E3779B97F4A7C15`,
//! multipliers `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`). Streams are
//! keyed by what they are used for, never by which worker consumes them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix64(value: u64) -> u64 {
    let mut z = value.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a parent seed with a stream key.
pub fn derive(parent: u64, key: u64) -> u64 {
    mix64(mix64(parent) ^ key.wrapping_mul(GOLDEN_GAMMA))
}

/// FNV-1a, used to turn stream names into keys.
pub fn name_key(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Per-record seed: a function of the master seed, the split and the record index only.
pub fn item_seed(master_seed: u64, split_key: u64, index: usize) -> u64 {
    derive(derive(master_seed, split_key), index as u64)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
