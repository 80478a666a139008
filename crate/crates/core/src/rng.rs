//! Seed splitting. Every random consumer draws from its own ChaCha stream
//! derived from the single run seed, so adding a consumer never shifts the
//! numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SYD: u64 = 1;
pub const STREAM_PROTOTYPES: u64 = 2;
/// k-means for window `p` uses stream `STREAM_KMEANS + p`.
pub const STREAM_KMEANS: u64 = 1 << 32;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
