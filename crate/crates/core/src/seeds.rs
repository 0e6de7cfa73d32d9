//! Seed derivation. Every random stream in the pipeline is keyed off one
//! 64-bit root seed plus a purpose tag, so independent stages never share or
//! reorder draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `(root, tag, index)` by hashing; stable across
/// platforms and releases.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    rng(derive_seed(root, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "a", 0), derive_seed(7, "a", 0));
        assert_ne!(derive_seed(7, "a", 0), derive_seed(7, "a", 1));
        assert_ne!(derive_seed(7, "a", 0), derive_seed(7, "b", 0));
        assert_ne!(derive_seed(7, "a", 0), derive_seed(8, "a", 0));
    }
}
