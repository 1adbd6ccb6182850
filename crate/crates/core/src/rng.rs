//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by `(seed, stream id)`; no ambient entropy is ever used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the training and estimation code.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const BATCHES: u64 = 1;
    pub const REPARAM: u64 = 2;
    pub const INTERVAL: u64 = 3;
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
