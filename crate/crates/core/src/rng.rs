//! Derived random streams so parallel and serial runs draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream tags, so two stages never share a stream by accident.
pub mod tag {
    pub const TRACES: u64 = 1;
    pub const ATTACK_TRAIN: u64 = 2;
    pub const ATTACK_EVAL: u64 = 3;
    pub const ATTACK_DATA: u64 = 4;
    pub const BALANCE: u64 = 5;
    pub const IDS: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const HANDCRAFTED: u64 = 8;
    pub const INIT: u64 = 9;
}
