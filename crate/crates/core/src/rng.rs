//! Seed discipline: every random choice in the crate flows from one user
//! seed through a named ChaCha stream, so components cannot perturb each
//! other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT_STREAM: u64 = 0;
pub const SHUFFLE_STREAM: u64 = 1;
pub const SYNTH_STREAM: u64 = 2;

/// Generator for one purpose under one seed.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
