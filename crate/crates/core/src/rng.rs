//! Named random streams derived from a master seed.
//!
//! A stream seed is a counter-based hash of `(master, name, index)`, so the
//! stream a component draws from never depends on what other components
//! consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator behind every stream.
pub type StreamRng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of the stream `name` under `master`.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    derive_indexed(master, name, 0)
}

/// Seed of the `index`-th stream called `name` under `master`.
pub fn derive_indexed(master: u64, name: &str, index: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ fnv1a(name.as_bytes()));
    splitmix64(h ^ splitmix64(index))
}

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn named_stream(master: u64, name: &str) -> StreamRng {
    stream(derive_seed(master, name))
}
