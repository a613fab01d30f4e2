//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! user seed and a stream id. Distinct purposes use distinct stream ids, and
//! per-instance work uses `stream = base + index`, so results do not depend
//! on processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids reserved for each consumer.
pub mod streams {
    pub const FLIP_RATES: u64 = 1;
    pub const PROJECTIONS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const PARTS_INIT: u64 = 4;
    pub const SOLVER_INIT: u64 = 5;
    pub const CLASSIFIER_INIT: u64 = 6;
    pub const BATCH_ORDER: u64 = 7;
    pub const FIXTURE: u64 = 8;
    /// Per-instance label draws use `PER_INSTANCE + i`.
    pub const PER_INSTANCE: u64 = 1 << 32;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn instance_stream(seed: u64, index: usize) -> Rng {
    stream(seed, streams::PER_INSTANCE + index as u64)
}
