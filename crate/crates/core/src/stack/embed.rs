//! Dense text embedding behind a pluggable interface.
//!
//! The default embedder is a deterministic signed hashing bag-of-tokens
//! encoder. It stands in for a fine-tuned dense model: dependency-free,
//! stable across platforms, and monotone in lexical overlap, which is what
//! the pipeline contracts need. Production embedders plug in behind
//! [`Embedder`].

use std::sync::Arc;

use crate::scalar::Scalar;
use crate::text::{fnv1a64, tokenize};

/// Text-to-unit-vector encoder used by the dense channel.
pub trait Embedder<F: Scalar>: Send + Sync {
    /// Identifier folded into configuration fingerprints.
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Unit vector for the text; the zero vector for texts with no tokens.
    fn embed(&self, text: &str) -> Vec<F>;
}

/// Signed hashing bag-of-tokens encoder over the distinct token set.
///
/// Each distinct token contributes ±1 at coordinate `fnv1a64(token) mod
/// dim`, the sign taken from bit 63 of the hash (set bit means −1). The
/// sum is L2-normalized. Repetitions carry no extra weight, so the cosine
/// tracks lexical overlap rather than phrasing length.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be at least 1");
        Self { dim }
    }
}

impl<F: Scalar> Embedder<F> for HashingEmbedder {
    fn name(&self) -> &'static str {
        "hashing-bag-v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<F> {
        let mut acc = vec![F::zero(); self.dim];
        let tokens: std::collections::BTreeSet<String> = tokenize(text).into_iter().collect();
        if tokens.is_empty() {
            return acc;
        }
        for token in &tokens {
            let h = fnv1a64(token.as_bytes());
            let coord = (h % self.dim as u64) as usize;
            let signed_one = if h & (1u64 << 63) != 0 { -F::one() } else { F::one() };
            acc[coord] = acc[coord] + signed_one;
        }
        normalize(&mut acc);
        acc
    }
}

/// L2-normalize in place; the zero vector stays zero.
pub fn normalize<F: Scalar>(v: &mut [F]) {
    let norm_sq = v.iter().fold(F::zero(), |s, &x| s + x * x);
    if norm_sq > F::zero() {
        let norm = norm_sq.sqrt();
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
}

/// Dot product; equals cosine similarity for unit vectors and 0 when either
/// side is the zero vector.
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for i in 0..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

/// Shared handle to the default embedder.
pub fn default_embedder<F: Scalar>(dim: usize) -> Arc<dyn Embedder<F>> {
    Arc::new(HashingEmbedder::new(dim))
}
