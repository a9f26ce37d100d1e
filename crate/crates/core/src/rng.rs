//! Seeded random streams.
//!
//! Every stochastic routine takes a caller-owned generator. Parallel work
//! derives one independent substream per item: the ChaCha8 generator seeded
//! with `seed`, switched to stream number `index`. Substreams depend only on
//! `(seed, index)`, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
