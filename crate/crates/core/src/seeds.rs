//! Seed schedule for reproducible scenario streams.
//!
//! Every random draw in an experiment descends from one master seed through
//! a SplitMix64 tree: `derive(parent, tag)` forks an independent child seed,
//! and each child seeds its own `ChaCha8Rng`. Scenario `i` of grid `g` uses
//! `derive(derive(derive(master, ENV_TAG), g), i)`, so adding grids or
//! scenarios never perturbs the seeds of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 output step.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `parent` for `tag`.
#[inline]
pub fn derive(parent: u64, tag: u64) -> u64 {
    mix64(mix64(parent) ^ tag.wrapping_mul(GOLDEN))
}

/// Tags for the top-level streams.
pub mod tags {
    pub const FORAGING: u64 = 0x464f_5241_4745;
    pub const PURSUIT: u64 = 0x5055_5253_5549;
    pub const CANDIDATES: u64 = 0x4341_4e44;
    pub const LILLIEFORS: u64 = 0x4c49_4c4c;
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
