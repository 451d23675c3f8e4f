//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by `(master seed, stream tag,
//! index)`, so results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INITIAL: u64 = 0x1;
pub const STREAM_REALIZATION: u64 = 0x2;
pub const STREAM_ACCEPT: u64 = 0x3;
pub const STREAM_SVE: u64 = 0x4;
pub const STREAM_RESTART: u64 = 0x5;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed, a stream tag and an index.
#[inline]
pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)).wrapping_add(index))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
