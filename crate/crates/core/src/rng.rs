//! Seeded random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha8 generator keyed by a
//! `(purpose, seed)` pair: the 64-bit seed expands into the ChaCha key via
//! `SeedableRng::seed_from_u64`, and the purpose string selects the ChaCha
//! stream id through its FNV-1a 64 hash. Two purposes never share a stream for
//! the same seed, and outputs are bit-identical across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The generator for `purpose` under `seed`.
pub fn stream(purpose: &str, seed: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(purpose.as_bytes()));
    rng
}

/// Derives an independent child seed, e.g. one per object or per epoch.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a64(purpose.as_bytes())) ^ splitmix64(index))
}
