//! Reproducible per-stream random number generators.
//!
//! Every rollout stream gets its own generator, seeded from a path of
//! integers such as `(run seed, stage, step, prompt, tuple)`. Streams never
//! share state, so parallel schedules produce the same draws as serial ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Stage tags used as the second path component of derived streams.
pub mod stage {
    pub const SUITE: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SFT: u64 = 3;
    pub const GATE: u64 = 4;
    pub const WARMUP: u64 = 5;
    pub const AUDIT: u64 = 6;
    pub const JOINT: u64 = 7;
    pub const REFRESH: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const BOOTSTRAP: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a path of integers into a single 64-bit seed.
pub fn derive_seed(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x2545_F491_4F6C_DD1D, |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

/// Builds an independent generator for the given stream path.
pub fn stream(path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(path))
}
