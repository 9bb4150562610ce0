//! Counter-based random streams.
//!
//! Every randomized computation draws from a ChaCha stream keyed by the user
//! seed and a fixed stream id, so results never depend on how work is split
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_TABLE_OFFSETS: u64 = 1;
pub(crate) const STREAM_SYNTHETIC: u64 = 2;
pub(crate) const STREAM_SIZE_SAMPLES: u64 = 3;
pub(crate) const STREAM_CHAIN_BASE: u64 = 1 << 16;
pub(crate) const STREAM_VALIDATE_BASE: u64 = 1 << 20;

/// Independent random stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
