//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose 256-bit
//! key is `SHA-256("pseudotherm-stream-v1" || seed_le || len(tag)_le || tag || index_le)`.
//! Streams for different `(seed, tag, index)` triples are independent, so
//! trials can run in any order or on any number of threads and still
//! produce identical results.
//!
//! The sampling primitives below only consume `next_u64`, which keeps the
//! mapping from key to circuit simple enough to reproduce in another
//! language.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Identifier written into every artifact so that other implementations can
/// tell whether they share our bit streams.
pub const RNG_ALGORITHM: &str =
    "chacha8;key=sha256(pseudotherm-stream-v1|seed|tag|index);prims=coin-msb,lemire64,f64-53,floyd";

pub type StreamRng = ChaCha8Rng;

/// Stream tags used across the crate.
pub mod tags {
    pub const GENERATE: &str = "generate";
    pub const COPIES: &str = "copies";
    pub const MATRIX: &str = "matrix";
    pub const ORACLE: &str = "oracle";
    pub const SIGNS: &str = "signs";
    pub const NULL: &str = "null-distribution";
}

pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    let mut h = Sha256::new();
    h.update(b"pseudotherm-stream-v1");
    h.update(seed.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// Fair coin from the most significant bit of one word.
#[inline]
pub fn coin<R: RngCore + ?Sized>(rng: &mut R) -> bool {
    rng.next_u64() >> 63 == 1
}

/// Uniform integer in `0..bound` (Lemire's multiply-and-reject).
pub fn below<R: RngCore + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "below: empty range");
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let wide = u128::from(rng.next_u64()) * u128::from(bound);
        if (wide as u64) >= threshold {
            return (wide >> 64) as u64;
        }
    }
}

/// Uniform integer in `0..bound` for bounds past `u64::MAX`.
pub fn below_u128<R: RngCore + ?Sized>(rng: &mut R, bound: u128) -> u128 {
    assert!(bound > 0, "below_u128: empty range");
    if bound <= u128::from(u64::MAX) {
        return u128::from(below(rng, bound as u64));
    }
    let mask = u128::MAX >> (bound - 1).leading_zeros();
    loop {
        let x = ((u128::from(rng.next_u64()) << 64) | u128::from(rng.next_u64())) & mask;
        if x < bound {
            return x;
        }
    }
}

/// Uniform double in `[0, 1)` with 53 random bits.
#[inline]
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn bernoulli<R: RngCore + ?Sized>(rng: &mut R, p: f64) -> bool {
    if p >= 1.0 {
        true
    } else if p <= 0.0 {
        false
    } else {
        unit_f64(rng) < p
    }
}

/// In-place Fisher-Yates shuffle, drawing from the back.
pub fn shuffle<T, R: RngCore + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// `count` distinct values from `lo..=hi`, in uniformly random order
/// (partial Fisher-Yates over the window).
pub fn choose_distinct<R: RngCore + ?Sized>(rng: &mut R, lo: u32, hi: u32, count: usize) -> Vec<u32> {
    let mut pool: Vec<u32> = (lo..=hi).collect();
    assert!(count <= pool.len(), "choose_distinct: {count} from a window of {}", pool.len());
    for i in 0..count {
        let j = i + below(rng, (pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |mut r: StreamRng| (0..4).map(|_| r.next_u64()).collect::<Vec<_>>();
        assert_eq!(draw(stream(7, "x", 3)), draw(stream(7, "x", 3)));
        assert_ne!(stream(7, "x", 3).next_u64(), stream(7, "x", 4).next_u64());
        assert_ne!(stream(7, "x", 3).next_u64(), stream(7, "y", 3).next_u64());
        assert_ne!(stream(7, "x", 3).next_u64(), stream(8, "x", 3).next_u64());
    }

    #[test]
    fn below_stays_in_range_and_covers_it() {
        let mut rng = stream(1, "t", 0);
        let mut seen = [0u32; 7];
        for _ in 0..7000 {
            seen[below(&mut rng, 7) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| (850..1150).contains(&c)), "{seen:?}");
        for _ in 0..100 {
            assert!(below_u128(&mut rng, 1u128 << 100) < 1u128 << 100);
        }
    }

    #[test]
    fn choose_distinct_full_window_is_a_permutation() {
        let mut rng = stream(2, "t", 0);
        let mut v = choose_distinct(&mut rng, 5, 14, 10);
        v.sort_unstable();
        assert_eq!(v, (5..=14).collect::<Vec<_>>());
    }

    #[test]
    fn unit_f64_in_range() {
        let mut rng = stream(3, "t", 0);
        let mean = (0..20000).map(|_| unit_f64(&mut rng)).sum::<f64>() / 20000.0;
        assert!((mean - 0.5).abs() < 0.01);
    }
}
