//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is seeded from
//! `derive(master, &[run_index, stage_tag, sample_index])`, so results do not
//! depend on processing order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags mixed into derived seeds.
pub mod stage {
    pub const SPLIT: u64 = 1;
    pub const OFFLINE_AUGMENT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const TTA: u64 = 4;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `master` with SplitMix64 finalization per step.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
