//! Seeded random streams. Every stochastic component takes its own stream,
//! derived from a base seed and a stream label, so runs are reproducible
//! independently of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser applied to `seed ^ mix(stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(stream))
}

pub fn stream(seed: u64, label: u64) -> SimRng {
    seeded(derive_seed(seed, label))
}

/// Stream labels in use across the crate.
pub mod labels {
    pub const TOPOLOGY: u64 = 1;
    pub const CHANNEL: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const NET_INIT: u64 = 4;
    pub const EXPLORATION: u64 = 5;
    pub const REPLAY: u64 = 6;
    pub const EVALUATION: u64 = 7;
    pub const PRESET: u64 = 8;
}
