//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! master seed, so e.g. turning the decomposition on or off never perturbs
//! the batch shuffle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    ClassMeans = 1,
    TrainSamples = 2,
    ValSamples = 3,
    TestSamples = 4,
    Ood = 5,
    Noise = 6,
    Init = 7,
    Shuffle = 8,
    Decompose = 9,
    Store = 10,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Sub-stream for the `index`-th member of a family (e.g. the i-th OOD set).
pub fn indexed_stream(seed: u64, which: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index + 1) << 8) | which as u64);
    rng
}
