//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by the run seed plus a purpose tag
//! and coordinates (sample id, epoch, ...), so streams are independent of
//! iteration order and can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SpadRng = ChaCha8Rng;

/// Mixes `base`, a purpose tag and a list of coordinates into a 32-byte seed.
pub fn derive_seed(base: u64, tag: &str, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

pub fn rng_from(base: u64, tag: &str, parts: &[&[u8]]) -> SpadRng {
    SpadRng::from_seed(derive_seed(base, tag, parts))
}

/// Stream for one sample in one epoch.
pub fn sample_rng(base: u64, tag: &str, sample_id: &str, epoch: usize) -> SpadRng {
    rng_from(
        base,
        tag,
        &[sample_id.as_bytes(), &(epoch as u64).to_le_bytes()],
    )
}

pub fn seeded(seed: u64) -> SpadRng {
    SpadRng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = sample_rng(1, "perturb", "s0", 3).random();
        let b: u64 = sample_rng(1, "perturb", "s0", 3).random();
        let c: u64 = sample_rng(1, "perturb", "s0", 4).random();
        let d: u64 = sample_rng(1, "noise", "s0", 3).random();
        let e: u64 = sample_rng(2, "perturb", "s0", 3).random();
        assert_eq!(a, b);
        assert!(a != c && a != d && a != e);
    }

    #[test]
    fn part_boundaries_matter() {
        assert_ne!(
            derive_seed(0, "t", &[b"ab", b"c"]),
            derive_seed(0, "t", &[b"a", b"bc"])
        );
    }
}
