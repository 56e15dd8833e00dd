//! Deterministic random streams keyed by position in an experiment.
//!
//! Every unit of work (a coupled trace, a coin flip for `J̃`) gets its own
//! ChaCha stream whose seed is a pure function of the master seed and an
//! integer key such as `(domain, replicate, process, lag)`. Results never
//! depend on which thread ran a unit or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Key domain for coupled-trace streams.
pub const DOMAIN_TRACE: u64 = 0x7472_6163;
/// Key domain for the `ξ` coins that randomize `J`.
pub const DOMAIN_XI: u64 = 0x0078_6921;
/// Key domain for ad hoc test batteries.
pub const DOMAIN_BATTERY: u64 = 0x6261_7474;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key into a 32-byte ChaCha seed.
pub fn derive_seed(master: u64, key: &[u64]) -> [u8; 32] {
    let mut acc = splitmix64(master);
    for &word in key {
        acc = splitmix64(acc ^ splitmix64(word));
    }
    let mut seed = [0u8; 32];
    let mut lane = acc;
    for chunk in seed.chunks_exact_mut(8) {
        lane = splitmix64(lane);
        chunk.copy_from_slice(&lane.to_le_bytes());
    }
    seed
}

pub fn stream(master: u64, key: &[u64]) -> Stream {
    ChaCha8Rng::from_seed(derive_seed(master, key))
}

/// A single reproducible fair coin for `(master, key)`.
pub fn coin(master: u64, key: &[u64]) -> bool {
    let seed = derive_seed(master, key);
    seed[0] & 1 == 1
}
