//! Seeded counter-based random streams.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by the run seed
//! and a stream identifier, so any sub-computation can be replayed on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream identifiers for the independent consumers of one seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const KINETICS: u64 = 2;
    pub const REPLENISH: u64 = 3;
    pub const MEASURE: u64 = 4;
    pub const COUPLING: u64 = 5;
    pub const EXCHANGE: u64 = 6;
    pub const HANG: u64 = 7;
}

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A stream further keyed by a counter, e.g. the tick index.
pub fn substream(seed: u64, id: u64, counter: u64) -> Stream {
    let mixed = seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(id);
    rng
}
