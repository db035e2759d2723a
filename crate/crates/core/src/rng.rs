//! Seeded random streams.
//!
//! Every random quantity in a run comes from a ChaCha8 stream whose seed is
//! derived from a master seed and a small tuple of stream labels, so serial
//! and parallel execution draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels used across the crate.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const ORACLE: u64 = 2;
    pub const LANCZOS: u64 = 3;
    pub const DATA: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const START: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(master), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn seeded(master: u64, labels: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(master, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_are_distinct_and_stable() {
        assert_ne!(derive_seed(0, &[1]), derive_seed(0, &[2]));
        assert_ne!(derive_seed(0, &[1, 2]), derive_seed(0, &[2, 1]));
        let a: u64 = seeded(42, &[stream::ORACLE]).random();
        let b: u64 = seeded(42, &[stream::ORACLE]).random();
        assert_eq!(a, b);
    }
}
