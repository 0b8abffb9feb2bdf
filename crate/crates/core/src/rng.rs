//! Deterministic random streams.
//!
//! Every random decision in a run draws from a ChaCha8 generator keyed by the
//! master seed and selected by a 64-bit stream id built from the round number
//! and a purpose tag (a client id, or one of the reserved tags below). Streams
//! never overlap, so the outcome of a round does not depend on the order in
//! which client updates are computed or on how many workers compute them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream used to draw the set of participating clients.
pub const SAMPLING_TAG: u32 = u32::MAX;
/// Stream used for the Gaussian-mechanism noise.
pub const NOISE_TAG: u32 = u32::MAX - 1;
/// Stream used for parameter initialization (round 0).
pub const INIT_TAG: u32 = u32::MAX - 2;
/// Stream used to shuffle shards when partitioning.
pub const PARTITION_TAG: u32 = u32::MAX - 3;

/// Generator for `(seed, round, tag)`.
pub fn stream(seed: u64, round: u32, tag: u32) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(round) << 32) | u64::from(tag));
    rng
}

/// Per-client local-training stream for a round.
pub fn client_stream(seed: u64, round: u32, client: u32) -> StreamRng {
    debug_assert!(
        client < PARTITION_TAG,
        "client id collides with a reserved tag"
    );
    stream(seed, round, client)
}
