//! Seeded random streams.
//!
//! ChaCha8 is used everywhere so that a seed produces the same stream on
//! every platform and toolchain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent stream for `(seed, purpose)`.
pub fn stream(seed: u64, purpose: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub mod purpose {
    pub const INIT: u64 = 1;
    pub const DATASET: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const DATA_ASSIST: u64 = 4;
    pub const TEST: u64 = 99;
}
