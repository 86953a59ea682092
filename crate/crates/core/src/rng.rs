//! Seeded random streams. All randomness in the crate flows through here so
//! that a `(seed, stream)` pair fully determines every draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for the given seed and stream id.
///
/// ChaCha is counter based, so distinct stream ids give independent
/// sequences for the same seed without any shared state.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Stream ids used across the crate.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_SYNTH: u64 = 2;
pub const STREAM_SPLIT: u64 = 3;
/// Epoch `e` shuffles with stream `STREAM_SHUFFLE_BASE + e`.
pub const STREAM_SHUFFLE_BASE: u64 = 1 << 32;
