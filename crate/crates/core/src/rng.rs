//! Seed discipline.
//!
//! Every random stream is a ChaCha8 generator (`rand_chacha::ChaCha8Rng`)
//! keyed by `seed_from_u64(master)` and selected with `set_stream(stream)`.
//! Two streams from the same master never overlap, and a given
//! `(master, stream)` pair reproduces the same sequence on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids used by the library. Replicate-indexed streams add the index
/// to a base id, so bases are spaced far apart.
pub mod streams {
    pub const NOISE: u64 = 0x1000_0000;
    pub const OPTIMIZER: u64 = 0x2000_0000;
    pub const BOOTSTRAP_WEIGHTS: u64 = 0x3000_0000;
    pub const BOOTSTRAP_OPTIMIZER: u64 = 0x4000_0000;
    pub const STUDY: u64 = 0x5000_0000;
}

pub fn stream(master: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed for `(master, stream)`; the first 64-bit word of that stream.
pub fn derive_seed(master: u64, stream_id: u64) -> u64 {
    use rand::RngCore;
    stream(master, stream_id).next_u64()
}
