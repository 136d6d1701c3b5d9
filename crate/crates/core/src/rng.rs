//! Keyed random streams.
//!
//! Every random quantity in the crate is drawn from a stream identified by a
//! root seed plus a short path of integer keys (replica, row, trial, ...).
//! The keys are folded through SplitMix64 into a ChaCha8 seed, so a stream's
//! contents depend only on its key path and never on evaluation order or the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a root seed and key path into a 64-bit sub-seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(0xA5A5_A5A5))))
}

/// Independent stream for `(seed, keys...)`.
pub fn stream(seed: u64, keys: &[u64]) -> Stream {
    let s = derive_seed(seed, keys);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(s.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
