//! Feedback-driven factual nuggets for retrieval-augmented agents.
//!
//! The crate turns free-form user feedback into compact, indexable
//! knowledge-base entries ("nuggets") and optimizes each entry against an
//! in-process hybrid retrieval stack until it is discoverable for the
//! triggering query and held-out paraphrases. An evaluation harness measures
//! retrieval, citation, and answer-level quality per construction variant.
//!
//! Retrieval math is generic over the scalar type (see [`scalar::Scalar`]);
//! the crate-root aliases below pin the default `f64` instantiation used by
//! the pipeline, the CLI, and all persisted artifacts.

pub mod agent;
pub mod benchmark;
pub mod cli;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod provider;
pub mod rng;
pub mod scalar;
pub mod stack;
pub mod storage;
pub mod text;

/// Scalar type used by the default pipeline instantiation.
pub type Score = f64;

/// Corpus index over the default scalar.
pub type Index = stack::CorpusIndex<Score>;

/// Scored retrieval candidate over the default scalar.
pub type Scored = stack::ScoredDoc<Score>;

/// Retrieval stack configuration over the default scalar.
pub type Config = stack::StackConfig<Score>;

/// Search pipeline (fusion, re-rank, calibration, gating) over the default scalar.
pub type Search = stack::Stack<Score>;
