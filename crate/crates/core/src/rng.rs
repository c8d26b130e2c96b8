//! Seed derivation.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is derived
//! from one run seed plus a stream tag and up to two ordinals, so that work split
//! across threads (per epoch, per pair) reproduces the sequential result exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct tags give statistically independent streams for the same seed.
pub mod stream {
    pub const PAIR_SAMPLING: u64 = 1;
    pub const DEV_SPLIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const SCHEDULE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const COLLAPSE: u64 = 6;
    pub const ANISOTROPY: u64 = 7;
    pub const SYNTH: u64 = 8;
    pub const EVAL_ADVERSARIAL: u64 = 9;
    pub const PCA: u64 = 10;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(seed, tag, a, b)` into a single 64-bit seed.
pub fn derive_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn rng_for(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, a, b))
}
