//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`), which produces the
//! same sequence on every platform. Independent consumers of one experiment
//! seed (data generation, splitting, initialization, shuffling, dropout,
//! noise) draw from distinct ChaCha streams of the same key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Sampling = 1,
    Noise = 2,
    Split = 3,
    Validation = 4,
    Init = 16,
    Shuffle = 32,
    Dropout = 48,
}

/// The generator for `stream` under `seed`, offset by `lane` (used to keep
/// per-model streams apart).
pub fn stream(seed: u64, stream: Stream, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64 + lane);
    rng
}

/// A 64-bit seed derived from `seed` for a given stream and lane.
pub fn derive_seed(seed: u64, s: Stream, lane: u64) -> u64 {
    use rand::RngCore;
    stream(seed, s, lane).next_u64()
}
