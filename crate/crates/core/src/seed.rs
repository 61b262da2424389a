//! Seed derivation. Every random stream in a run is keyed by the base seed
//! plus a fixed tag path, so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a path of tags into a new 64-bit seed.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &tag| {
        splitmix64(acc ^ splitmix64(tag))
    })
}

pub fn rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}

pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const LOCAL: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const PARTITION: u64 = 6;
    pub const VISIBLE: u64 = 7;
    pub const MONTE_CARLO: u64 = 8;
    pub const BASELINE: u64 = 9;
    pub const COMPROMISED: u64 = 10;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_change_the_seed() {
        assert_ne!(derive(1, &[1]), derive(1, &[2]));
        assert_ne!(derive(1, &[1, 2]), derive(1, &[2, 1]));
        assert_eq!(derive(7, &[3, 4]), derive(7, &[3, 4]));
    }
}
