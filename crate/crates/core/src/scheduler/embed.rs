//! Deterministic hashed bag-of-tokens embedding.
//!
//! Tokens are the lowercase alphanumeric runs of the input. Each token is
//! hashed with 64-bit FNV-1a; the hash picks one of [`EMBED_DIM`] buckets
//! (`hash % 64`) and a sign (top bit clear is +1). The accumulated vector is
//! L2-normalized. Inputs without tokens map to the zero vector.

use alloc::string::String;
use alloc::vec::Vec;

pub const EMBED_DIM: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Unit-norm (or all-zero) vector of [`EMBED_DIM`] components.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding([f64; EMBED_DIM]);

impl Embedding {
    pub fn zero() -> Self {
        Embedding([0.0; EMBED_DIM])
    }

    /// Normalizes an arbitrary vector; a zero-norm input stays zero.
    pub fn from_raw(mut values: [f64; EMBED_DIM]) -> Self {
        let norm = libm::sqrt(values.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 || !norm.is_finite() {
            return Embedding::zero();
        }
        for v in &mut values {
            *v /= norm;
        }
        Embedding(values)
    }

    pub fn values(&self) -> &[f64; EMBED_DIM] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum::<f64>())
    }

    /// Cosine similarity; zero when either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        if self.is_zero() || other.is_zero() {
            return 0.0;
        }
        let dot: f64 = self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum();
        // `+ 0.0` folds -0.0 into 0.0 so equal scores compare equal.
        dot.clamp(-1.0, 1.0) + 0.0
    }
}

pub fn embed(text: &str) -> Embedding {
    let mut acc = [0.0f64; EMBED_DIM];
    for token in tokenize(text) {
        let h = fnv1a64(token.as_bytes());
        let bucket = (h % EMBED_DIM as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
    Embedding::from_raw(acc)
}
