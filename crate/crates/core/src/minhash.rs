//! MinHash signatures over character-shingle sets.
//!
//! Each permutation is simulated by a universal hash `(a·x + b) mod p` with
//! `p = 2^61 − 1`, applied to a stable 64-bit FNV-1a hash of the shingle.
//! The fraction of positions at which two signatures agree is an unbiased
//! estimate of the Jaccard similarity of the underlying sets.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::shingles;

const MERSENNE_61: u64 = (1 << 61) - 1;

/// Smallest permutation count accepted when building an index.
pub const MIN_PERMUTATIONS: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MinHashError {
    #[error("signature length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("num_permutations must be at least {MIN_PERMUTATIONS}, got {0}")]
    TooFewPermutations(usize),
}

/// A fixed-length MinHash signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature(pub Vec<u64>);

impl Signature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut state: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
    state
}

fn mod_mersenne(x: u128) -> u64 {
    let p = u128::from(MERSENNE_61);
    let folded = (x & p) + (x >> 61);
    let folded = (folded & p) + (folded >> 61);
    let r = folded as u64;
    if r >= MERSENNE_61 {
        r - MERSENNE_61
    } else {
        r
    }
}

/// A seeded family of simulated permutations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHasher {
    seed: u64,
    coefficients: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(num_permutations: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coefficients =
            (0..num_permutations).map(|_| (rng.gen_range(1..MERSENNE_61), rng.gen_range(0..MERSENNE_61))).collect();
        Self { seed, coefficients }
    }

    pub fn num_permutations(&self) -> usize {
        self.coefficients.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Signature of an arbitrary set of shingles. The empty set maps to an
    /// all-`u64::MAX` signature.
    pub fn signature_of_set<S: AsRef<str>>(&self, set: impl IntoIterator<Item = S>) -> Signature {
        let mut mins = vec![u64::MAX; self.coefficients.len()];
        for item in set {
            let x = u128::from(fnv1a(item.as_ref().as_bytes()) % MERSENNE_61);
            for (slot, &(a, b)) in mins.iter_mut().zip(&self.coefficients) {
                let h = mod_mersenne(u128::from(a) * x + u128::from(b));
                if h < *slot {
                    *slot = h;
                }
            }
        }
        Signature(mins)
    }

    /// Signature of the lowercase 3-gram shingles of `text`.
    pub fn signature(&self, text: &str) -> Signature {
        self.signature_of_set(shingles(text))
    }
}

/// Fraction of positions where the two signatures agree.
pub fn minhash_estimate(a: &Signature, b: &Signature) -> Result<f64, MinHashError> {
    if a.len() != b.len() {
        return Err(MinHashError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let agree = a.0.iter().zip(&b.0).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.len() as f64)
}

/// One indexed database value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEntry {
    pub table: String,
    pub column: String,
    pub value: String,
    pub signature: Signature,
}

/// One indexed column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnEntry {
    pub table: String,
    pub column: String,
    pub signature: Signature,
}

/// Signatures for every (table, column, value) triple and every column name
/// of a catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinHashIndex {
    pub num_permutations: usize,
    pub seed: u64,
    pub entries: Vec<ValueEntry>,
    pub columns: Vec<ColumnEntry>,
}

impl MinHashIndex {
    pub fn hasher(&self) -> MinHasher {
        MinHasher::new(self.num_permutations, self.seed)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Exact Jaccard similarity of the shingle sets of two strings.
pub fn exact_shingle_jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = shingles(a);
    let sb: BTreeSet<String> = shingles(b);
    crate::text::jaccard(&sa, &sb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_estimate_one() {
        let h = MinHasher::new(128, 7);
        let a = h.signature("Contra Costa");
        let b = h.signature("contra costa");
        assert_eq!(minhash_estimate(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_sets_estimate_near_zero() {
        let h = MinHasher::new(128, 11);
        let a = h.signature("abcdefghij");
        let b = h.signature("0123456789");
        assert!(minhash_estimate(&a, &b).unwrap() < 0.1);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = MinHasher::new(16, 1).signature("x");
        let b = MinHasher::new(32, 1).signature("x");
        assert_eq!(minhash_estimate(&a, &b), Err(MinHashError::LengthMismatch { left: 16, right: 32 }));
    }

    #[test]
    fn contra_costa_within_three_sigma() {
        let exact = exact_shingle_jaccard("Contra Costa", "contra costa county");
        let n = 128.0;
        let tol = 3.0 * (exact * (1.0 - exact) / n).sqrt();
        let h = MinHasher::new(128, 2024);
        let est = minhash_estimate(&h.signature("Contra Costa"), &h.signature("contra costa county")).unwrap();
        assert!((est - exact).abs() <= tol, "est {est} exact {exact} tol {tol}");
    }

    #[test]
    fn hasher_is_deterministic_per_seed() {
        assert_eq!(MinHasher::new(64, 3), MinHasher::new(64, 3));
        assert_ne!(MinHasher::new(64, 3), MinHasher::new(64, 4));
    }

    #[test]
    fn mersenne_reduction_matches_naive() {
        for x in [0u128, 1, u128::from(MERSENNE_61), u128::from(u64::MAX) * 12345] {
            assert_eq!(u128::from(mod_mersenne(x)), x % u128::from(MERSENNE_61));
        }
    }
}
