//! Seeded random streams.
//!
//! Every run has one master seed. Independent streams (block choice, delay
//! draws, each concurrent worker, each trial of a batch) are ChaCha8 streams
//! of that seed selected with [`stream`]; the stream ids are the constants
//! below, batch trials use `TRIAL_BASE + index`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const BLOCK_STREAM: u64 = 0;
pub const DELAY_STREAM: u64 = 1;
pub const INIT_STREAM: u64 = 2;
pub const WORKER_BASE: u64 = 1 << 16;
pub const TRIAL_BASE: u64 = 1 << 32;

/// The ChaCha8 stream `id` of the master `seed`.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
