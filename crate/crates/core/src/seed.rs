//! Labeled seed derivation. Every random stream in a run descends from one
//! root seed, so results do not depend on call order or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across platforms and compiler versions
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Child seed for the stream named `label` with index `id`.
pub fn derive_seed(parent: u64, label: &str, id: u64) -> u64 {
    splitmix64(splitmix64(parent ^ label_hash(label)).wrapping_add(splitmix64(id)))
}

/// Seed for an unordered index pair.
pub fn pair_seed(seed: u64, i: usize, j: usize) -> u64 {
    let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
    splitmix64(splitmix64(seed ^ (lo as u64).rotate_left(32)) ^ hi as u64)
}

/// Seed summarizing a vertex list (order-insensitive).
pub fn set_seed(parent: u64, label: &str, items: &[usize]) -> u64 {
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    let mut h = label_hash(label);
    for v in sorted {
        h = splitmix64(h ^ v as u64);
    }
    derive_seed(parent, label, h)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform value in the open interval (0, 1) from 52 hashed bits.
#[inline]
pub fn unit_open(h: u64) -> f64 {
    ((h >> 12) as f64 + 0.5) / (1u64 << 52) as f64
}
