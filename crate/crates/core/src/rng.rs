//! Seeded random streams.
//!
//! Every generator in the crate draws from a [`ChaCha8Rng`]. Independent
//! streams for concurrent runs are derived with [`stream`], which keys the
//! ChaCha stream id on the run id so that `(seed, run_id)` pairs never share
//! keystream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Root generator for a seed.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Split function `(seed, run_id) -> stream`.
pub fn stream(seed: u64, run_id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_id);
    rng
}

/// Purpose tags for sub-streams within one run.
pub mod purpose {
    pub const CRITIC_INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const BANK: u64 = 3;
    pub const CLASS_MEANS: u64 = 4;
}
