//! Seed derivation.
//!
//! Every random stream in a run is derived from the single run seed together
//! with a purpose label and a list of indices:
//!
//! ```text
//! derived = first 8 bytes (little endian) of
//!           SHA-256( seed.to_le_bytes() || label || 0x00 || idx_0.to_le_bytes() || ... )
//! ```
//!
//! The labels used by the crate are listed in [`labels`]. Streams are
//! `ChaCha8Rng` generators seeded with the derived value, so a component can be
//! reproduced in isolation from `(seed, label, indices)` alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Purpose labels for derived streams.
pub mod labels {
    pub const INIT: &str = "init";
    pub const EMPLOYED: &str = "employed";
    pub const ONLOOKER: &str = "onlooker";
    pub const SCOUT: &str = "scout";
    pub const EVALUATION: &str = "evaluation";
    pub const DATASET: &str = "dataset";
    pub const PRETRAIN: &str = "pretrain";
    pub const FINE_TUNE: &str = "fine-tune";
}

pub fn derive_seed(seed: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    for idx in indices {
        hasher.update(idx.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        let a = derive_seed(7, labels::EMPLOYED, &[1, 2]);
        assert_eq!(a, derive_seed(7, labels::EMPLOYED, &[1, 2]));
        assert_ne!(a, derive_seed(7, labels::ONLOOKER, &[1, 2]));
        assert_ne!(a, derive_seed(7, labels::EMPLOYED, &[2, 1]));
        assert_ne!(a, derive_seed(8, labels::EMPLOYED, &[1, 2]));
    }

    #[test]
    fn streams_replay() {
        let mut x = stream(3, labels::SCOUT, &[0]);
        let mut y = stream(3, labels::SCOUT, &[0]);
        let xs: Vec<u64> = (0..8).map(|_| x.gen()).collect();
        let ys: Vec<u64> = (0..8).map(|_| y.gen()).collect();
        assert_eq!(xs, ys);
    }
}
