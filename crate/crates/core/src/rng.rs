//! Seeding and stream-splitting conventions.
//!
//! Every stochastic computation in the crate draws from ChaCha12 seeded with
//! a 64-bit value. Parallel work never shares a generator: a master seed is
//! split into independent streams via ChaCha's 64-bit stream id, one stream
//! per scenario, and sequential loops derive per-step batch seeds by drawing
//! a `u64` from their own stream. Identical (seed, config) therefore replay
//! bit-identically regardless of what ran before or concurrently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// The pinned generator for the whole crate.
pub type RunRng = ChaCha12Rng;

/// Root generator for a run.
pub fn master(seed: u64) -> RunRng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Independent stream for one scenario or suite section.
///
/// Streams with different ids never overlap even under the same seed.
pub fn stream(seed: u64, stream_id: u64) -> RunRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Derive a fresh sub-seed (for a batch or a child task) from a loop's rng.
pub fn sub_seed(rng: &mut RunRng) -> u64 {
    rng.gen::<u64>()
}
