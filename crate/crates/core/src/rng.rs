//! Seeded random streams.
//!
//! Every random quantity in the crate comes from a [`ChaCha8Rng`] seeded with
//! `seed_from_u64`. Independent streams hanging off one user seed are split
//! with [`derive_seed`], a SplitMix64 finalizer over `seed` and a stream tag,
//! so adding a new consumer never perturbs the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the generator recorded in run manifests.
pub const RNG_ALGORITHM: &str =
    "ChaCha8Rng::seed_from_u64 + rand_distr::StandardNormal; sub-streams via splitmix64(seed, tag)";

/// Stream tags. Values are part of the on-disk reproducibility contract.
pub mod tag {
    pub const SKETCH_OMEGA: u64 = 1;
    pub const SKETCH_PSI: u64 = 2;
    pub const SKETCH_OMEGA_STREAM: u64 = 3;
    pub const MODEL_INIT: u64 = 16;
    pub const MINIBATCH: u64 = 17;
    pub const MEMORY_SAMPLE: u64 = 18;
    pub const RESERVOIR: u64 = 19;
    pub const SKETCH_STATE: u64 = 20;
    pub const TRAIN_TEST_SPLIT: u64 = 32;
    pub const PERMUTATION: u64 = 33;
    pub const SYNTHETIC_DATA: u64 = 34;
    pub const MONTE_CARLO: u64 = 48;
    pub const SPECTRUM_BASIS: u64 = 49;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `tag` from `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
