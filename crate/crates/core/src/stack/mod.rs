//! Hybrid retrieval: tokenization, sparse BM25, a deterministic dense
//! embedder, reciprocal-rank fusion, re-ranking, score calibration, and
//! threshold gating. The scoring math is generic over [`crate::scalar::Scalar`].

pub mod embed;
pub mod index;
pub mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use embed::{default_embedder, dot, Embedder, HashingEmbedder};
pub use index::{bm25_idf, CorpusIndex, Posting, ScopedInsertion};
pub use search::{
    bm25_score_doc, bm25_scores, bm25_search, bm25_term, dense_search, rrf_fuse, Calibrator,
    LexicalDenseReranker, LogisticCalibrator, Reranker, Stack,
};

/// One retrieval candidate as it moves through the pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc<F> {
    pub doc_id: String,
    pub sparse_score: F,
    pub dense_score: F,
    pub fused_rank: usize,
    pub rerank_score: F,
    pub calibrated: F,
}

/// Stack parameters. `k_fuse` is the pre-re-rank candidate budget; the
/// remaining values configure the stand-in scorers and the gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackConfig<F> {
    pub k_fuse: usize,
    pub rrf_constant: u32,
    pub bm25_k1: F,
    pub bm25_b: F,
    pub rerank_weight_sparse: F,
    pub calib_a: F,
    pub calib_b: F,
    pub gate_threshold: F,
    pub embed_dim: usize,
    pub channel_depth: usize,
}

impl<F: Scalar> Default for StackConfig<F> {
    fn default() -> Self {
        Self {
            k_fuse: 60,
            rrf_constant: 60,
            bm25_k1: F::lit(1.2),
            bm25_b: F::lit(0.75),
            rerank_weight_sparse: F::lit(0.5),
            calib_a: F::lit(4.0),
            calib_b: F::lit(-2.0),
            gate_threshold: F::lit(0.5),
            embed_dim: 256,
            channel_depth: 200,
        }
    }
}

impl<F: Scalar> StackConfig<F> {
    pub fn validate(&self) -> Result<(), StackError> {
        if self.k_fuse < 1 {
            return Err(StackError::InvalidConfig("k_fuse must be at least 1".into()));
        }
        if self.gate_threshold < F::zero() || self.gate_threshold > F::one() {
            return Err(StackError::InvalidConfig("gate_threshold must be in [0, 1]".into()));
        }
        if self.rerank_weight_sparse < F::zero() || self.rerank_weight_sparse > F::one() {
            return Err(StackError::InvalidConfig("rerank_weight_sparse must be in [0, 1]".into()));
        }
        if self.channel_depth < self.k_fuse {
            return Err(StackError::InvalidConfig("channel_depth must be >= k_fuse".into()));
        }
        if self.embed_dim < 1 {
            return Err(StackError::InvalidConfig("embed_dim must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StackError {
    #[error("document not found: {0}")]
    NotFound(String),
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("invalid stack config: {0}")]
    InvalidConfig(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index store parse: {0}")]
    Parse(#[from] serde_json::Error),
}
