//! Named, splittable seed streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] derived from a
//! root seed, a textual tag and a list of integer indices. Deriving per
//! (instance, coalition) keeps serial and parallel runs bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a 64-bit seed from a root seed, a tag and indices.
pub fn derive_seed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ fnv1a(tag.as_bytes()));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn stream(seed: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, indices))
}

/// Stable hash of an instance vector, used to key per-instance streams.
pub fn hash_instance(x: &[f64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for v in x {
        h = splitmix64(h ^ v.to_bits());
    }
    h
}
