//! Deterministic seed derivation.
//!
//! Every stochastic operation takes an explicit `u64` seed; ensembles (trace
//! averages, Monte-Carlo repetitions, campaign points) derive per-member
//! seeds from a master seed plus integer tags. Derivation uses the splitmix64
//! finalizer, which decorrelates consecutive tags well and is stable across
//! platforms. No global RNG state anywhere in the library.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a sequence of integer tags.
///
/// The tags identify the consumer (campaign point index, repetition index,
/// trace index, ...); different tag sequences give statistically independent
/// streams, identical ones reproduce the same stream.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0x243f_6a88_85a3_08d3);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag));
    }
    state
}

/// Build the library's standard RNG from a seed.
///
/// ChaCha8 is counter-based, portable, and fast; all consumers go through
/// this constructor so the generator can be swapped in one place.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derivation_is_deterministic() {
        let a = derive_seed(42, &[1, 2, 3]);
        let b = derive_seed(42, &[1, 2, 3]);
        assert_eq!(a, b, "same master and tags must derive the same seed");
    }

    #[test]
    fn different_tags_give_different_seeds() {
        let base = derive_seed(42, &[0, 0]);
        assert_ne!(base, derive_seed(42, &[0, 1]), "sibling tags must differ");
        assert_ne!(base, derive_seed(42, &[1, 0]), "tag order must matter");
        assert_ne!(base, derive_seed(43, &[0, 0]), "master seed must matter");
    }

    #[test]
    fn empty_tag_list_still_mixes_master() {
        // A raw master seed of 0 must not produce the all-zero ChaCha state.
        let seed = derive_seed(0, &[]);
        assert_ne!(seed, 0, "derived seed should be mixed, not passthrough");
        let mut rng = rng_from_seed(seed);
        let first = rng.next_u64();
        let mut rng2 = rng_from_seed(seed);
        assert_eq!(first, rng2.next_u64(), "rng construction must be reproducible");
    }
}
