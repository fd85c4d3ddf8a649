//! Seeded random streams.
//!
//! Every trial seed fans out into independent ChaCha8 streams, one per
//! component of the experiment, so that e.g. the noise draw can change without
//! disturbing the signatures drawn from the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed sub-stream labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Signatures = 1,
    Symbols = 2,
    Noise = 3,
    /// Start vectors for power iteration.
    Probe = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
