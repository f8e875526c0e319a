//! Seed derivation. Every random draw in the simulator comes from a
//! `ChaCha8Rng` keyed by a seed derived here, so results do not depend on
//! thread scheduling or on the order in which clients are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent consumers of one base seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Split = 2,
    Partition = 3,
    Malicious = 4,
    LocalBatches = 5,
    Backdoor = 6,
    GlobalParam = 7,
    DoubleSplit = 8,
    Bucketing = 9,
    Synthetic = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and a path of indices
/// (epoch, client id, ...) into a new 64-bit seed.
pub fn derive(base: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    for &p in path {
        h = splitmix64(h ^ p);
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(base: u64, stream: Stream, path: &[u64]) -> ChaCha8Rng {
    rng(derive(base, stream, path))
}
