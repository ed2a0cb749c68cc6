//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! the run seed and a fixed tag, so adding draws in one component never
//! shifts the randomness seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod tags {
    pub const SIMULATE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const OUTCOME_INIT: u64 = 10;
    pub const OUTCOME_TRAIN: u64 = 11;
    pub const PROPENSITY_INIT: u64 = 12;
    pub const PROPENSITY_TRAIN: u64 = 13;
    pub const PHI_INIT: u64 = 20;
    pub const OUTCOME_HEAD_INIT: u64 = 21;
    pub const ADVERSARY_INIT: u64 = 22;
    pub const REP_SHUFFLE: u64 = 23;
    pub const PHI_DROPOUT: u64 = 24;
    pub const OUTCOME_HEAD_DROPOUT: u64 = 25;
    pub const ADVERSARY_DROPOUT: u64 = 26;
    pub const POLICY_INIT: u64 = 30;
    pub const POLICY_SHUFFLE: u64 = 31;
    pub const POLICY_DROPOUT: u64 = 32;
    pub const PROBE: u64 = 40;
    pub const MONTE_CARLO: u64 = 50;
    pub const GRID: u64 = 60;
}

/// Independent stream `tag` of the generator seeded with `seed`.
pub fn stream(seed: u64, tag: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}
