//! Named random streams derived from a single root seed.
//!
//! A stream seed is `splitmix64(root ^ fnv1a64(key))`, and the stream itself
//! is a ChaCha8 generator seeded from that value. Keys are plain strings such
//! as `"data-gen"` or `"shuffle/c3/r17"`. Because each consumer owns its own
//! key, adding a new consumer never shifts the draws seen by existing ones.

use alloc::format;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream named `key` under `root`.
pub fn stream_seed(root: u64, key: &str) -> u64 {
    splitmix64(root ^ fnv1a64(key.as_bytes()))
}

pub fn stream(root: u64, key: &str) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(root, key))
}

/// Generator for a bare seed, used where callers already hold a derived seed.
pub fn from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub mod keys {
    //! Stream keys used by the experiment driver.
    use super::*;
    use alloc::string::String;

    pub const DATA_GEN: &str = "data-gen";
    pub const INIT: &str = "init";

    pub fn shuffle(client: usize, round: usize) -> String {
        format!("shuffle/c{client}/r{round}")
    }

    pub fn participation(round: usize) -> String {
        format!("participation/r{round}")
    }

    pub fn epoch_draw(round: usize) -> String {
        format!("epoch-draw/r{round}")
    }
}
