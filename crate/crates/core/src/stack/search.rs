//! The five-stage query path: sparse BM25, dense cosine, reciprocal-rank
//! fusion to a bounded candidate list, re-ranking, and calibration into a
//! gate decision.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::scalar::Scalar;
use crate::stack::embed::{default_embedder, dot, Embedder};
use crate::stack::index::CorpusIndex;
use crate::stack::{ScoredDoc, StackConfig};
use crate::text::{fnv1a64, token_jaccard, tokenize};

/// BM25 contribution of one term occurrence set inside one document.
pub fn bm25_term<F: Scalar>(idf: F, tf: u32, doc_len: usize, avg_len: F, k1: F, b: F) -> F {
    let tf = F::lit(tf as f64);
    let len_ratio = if avg_len > F::zero() { F::lit(doc_len as f64) / avg_len } else { F::one() };
    idf * (tf * (k1 + F::one())) / (tf + k1 * (F::one() - b + b * len_ratio))
}

/// BM25 scores for every document matching at least one query token.
/// Contributions accumulate in query-token order, so repeated query tokens
/// count twice and results are bit-reproducible.
pub fn bm25_scores<F: Scalar>(
    idx: &CorpusIndex<F>,
    query_tokens: &[String],
    cfg: &StackConfig<F>,
) -> BTreeMap<String, F> {
    let mut scores: BTreeMap<String, F> = BTreeMap::new();
    for token in query_tokens {
        let Some(postings) = idx.postings(token) else { continue };
        let Some(idf) = idx.idf(token) else { continue };
        for p in postings {
            let len = idx.doc_length(&p.doc_id).unwrap_or(0);
            let term = bm25_term(idf, p.tf, len, idx.avg_doc_length(), cfg.bm25_k1, cfg.bm25_b);
            let entry = scores.entry(p.doc_id.clone()).or_insert_with(F::zero);
            *entry = *entry + term;
        }
    }
    scores
}

/// BM25 score of a single document for the query; zero when nothing
/// matches. Matches [`bm25_scores`] bit-for-bit.
pub fn bm25_score_doc<F: Scalar>(
    idx: &CorpusIndex<F>,
    query_tokens: &[String],
    doc_id: &str,
    cfg: &StackConfig<F>,
) -> F {
    let mut score = F::zero();
    for token in query_tokens {
        let Some(postings) = idx.postings(token) else { continue };
        let Some(idf) = idx.idf(token) else { continue };
        if let Ok(pos) = postings.binary_search_by(|p| p.doc_id.as_str().cmp(doc_id)) {
            let len = idx.doc_length(doc_id).unwrap_or(0);
            score = score
                + bm25_term(idf, postings[pos].tf, len, idx.avg_doc_length(), cfg.bm25_k1, cfg.bm25_b);
        }
    }
    score
}

/// Top-k documents by BM25. Ties break by ascending doc_id. An empty query
/// or a query with no matching token yields an empty result.
pub fn bm25_search<F: Scalar>(
    idx: &CorpusIndex<F>,
    query_tokens: &[String],
    k: usize,
    cfg: &StackConfig<F>,
) -> Vec<ScoredDoc<F>> {
    let scores = bm25_scores(idx, query_tokens, cfg);
    let mut ranked: Vec<(String, F)> = scores.into_iter().collect();
    sort_desc_by_score(&mut ranked);
    ranked
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (doc_id, score))| ScoredDoc {
            doc_id,
            sparse_score: score,
            dense_score: F::zero(),
            fused_rank: i + 1,
            rerank_score: F::zero(),
            calibrated: F::zero(),
        })
        .collect()
}

/// Top-k documents by dense cosine against the query vector. A zero query
/// vector matches nothing (cosine with anything is defined as 0).
pub fn dense_search<F: Scalar>(idx: &CorpusIndex<F>, query_vec: &[F], k: usize) -> Vec<(String, F)> {
    if query_vec.iter().all(|x| *x == F::zero()) {
        return Vec::new();
    }
    let mut ranked: Vec<(String, F)> = idx
        .doc_ids()
        .map(|id| {
            let v = idx.dense_vector(id).expect("indexed doc has a vector");
            (id.to_string(), dot(query_vec, v))
        })
        .collect();
    sort_desc_by_score(&mut ranked);
    ranked.truncate(k);
    ranked
}

/// Reciprocal-rank fusion of ranked id lists: each channel contributes
/// `1 / (constant + rank)` with 1-based ranks; ids absent from a channel
/// contribute nothing for it.
pub fn rrf_fuse<F: Scalar>(channels: &[Vec<String>], constant: u32) -> Vec<(String, F)> {
    let c = F::lit(constant as f64);
    let mut fused: BTreeMap<String, F> = BTreeMap::new();
    for channel in channels {
        for (i, id) in channel.iter().enumerate() {
            let contribution = F::one() / (c + F::lit((i + 1) as f64));
            let entry = fused.entry(id.clone()).or_insert_with(F::zero);
            *entry = *entry + contribution;
        }
    }
    let mut ranked: Vec<(String, F)> = fused.into_iter().collect();
    sort_desc_by_score(&mut ranked);
    ranked
}

fn sort_desc_by_score<F: Scalar>(items: &mut [(String, F)]) {
    items.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
}

/// Candidate re-scoring stage. Pluggable scorers reorder and score only:
/// they can never add or remove candidates.
pub trait Reranker<F: Scalar>: Send + Sync {
    /// Identifier folded into configuration fingerprints.
    fn name(&self) -> &'static str;

    /// One score per candidate, aligned with the input slice.
    fn rescore(&self, query: &str, candidates: &[ScoredDoc<F>]) -> Vec<F>;

    /// Cross-encoder-style relevance of `text` to `query`, in [0, 1].
    fn score_pair(&self, query: &str, text: &str) -> F;
}

/// Default re-ranker: weighted min-max-normalized sparse score plus
/// clamped dense cosine. Stands in for a fine-tuned cross-encoder behind
/// the same contract.
pub struct LexicalDenseReranker<F: Scalar> {
    weight_sparse: F,
    embedder: Arc<dyn Embedder<F>>,
}

impl<F: Scalar> LexicalDenseReranker<F> {
    pub fn new(weight_sparse: F, embedder: Arc<dyn Embedder<F>>) -> Self {
        Self { weight_sparse, embedder }
    }
}

/// Min-max normalization of the candidates' sparse scores. Degenerate
/// spans: a singleton maps to 1.0; larger all-equal spans map to 1.0 when
/// positive and 0.0 when every candidate has zero sparse score.
fn minmax_sparse<F: Scalar>(candidates: &[ScoredDoc<F>]) -> Vec<F> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut lo = candidates[0].sparse_score;
    let mut hi = candidates[0].sparse_score;
    for c in candidates {
        if c.sparse_score < lo {
            lo = c.sparse_score;
        }
        if c.sparse_score > hi {
            hi = c.sparse_score;
        }
    }
    if hi > lo {
        candidates.iter().map(|c| (c.sparse_score - lo) / (hi - lo)).collect()
    } else {
        let flat = if candidates.len() == 1 || hi > F::zero() { F::one() } else { F::zero() };
        vec![flat; candidates.len()]
    }
}

impl<F: Scalar> Reranker<F> for LexicalDenseReranker<F> {
    fn name(&self) -> &'static str {
        "lexical-dense-v1"
    }

    fn rescore(&self, _query: &str, candidates: &[ScoredDoc<F>]) -> Vec<F> {
        let normalized = minmax_sparse(candidates);
        candidates
            .iter()
            .zip(normalized)
            .map(|(c, ms)| {
                let dense = if c.dense_score > F::zero() { c.dense_score } else { F::zero() };
                self.weight_sparse * ms + (F::one() - self.weight_sparse) * dense
            })
            .collect()
    }

    fn score_pair(&self, query: &str, text: &str) -> F {
        let lexical = F::lit(token_jaccard(query, text));
        let qv = self.embedder.embed(query);
        let tv = self.embedder.embed(text);
        let cos = dot(&qv, &tv);
        let dense = if cos > F::zero() { cos } else { F::zero() };
        self.weight_sparse * lexical + (F::one() - self.weight_sparse) * dense
    }
}

/// Monotone map from re-ranker scores into [0, 1].
pub trait Calibrator<F: Scalar>: Send + Sync {
    /// Identifier folded into configuration fingerprints.
    fn name(&self) -> &'static str;

    fn calibrate(&self, score: F) -> F;
}

/// Two-parameter logistic `σ(a·s + b)`: the degenerate "small MLP". Output
/// is always inside the open interval (0, 1) and strictly increases in the
/// input.
pub struct LogisticCalibrator<F: Scalar> {
    pub a: F,
    pub b: F,
}

impl<F: Scalar> Calibrator<F> for LogisticCalibrator<F> {
    fn name(&self) -> &'static str {
        "logistic-v1"
    }

    fn calibrate(&self, score: F) -> F {
        let z = self.a * score + self.b;
        F::one() / (F::one() + (-z).exp())
    }
}

/// The full query path bundled with its configuration and plugins.
pub struct Stack<F: Scalar> {
    pub config: StackConfig<F>,
    reranker: Arc<dyn Reranker<F>>,
    calibrator: Arc<dyn Calibrator<F>>,
}

impl<F: Scalar> Clone for Stack<F> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            reranker: Arc::clone(&self.reranker),
            calibrator: Arc::clone(&self.calibrator),
        }
    }
}

impl<F: Scalar> Stack<F> {
    /// Stack with the default re-ranker and calibrator for this config.
    pub fn new(config: StackConfig<F>) -> Self {
        let embedder = default_embedder(config.embed_dim);
        let reranker = Arc::new(LexicalDenseReranker::new(config.rerank_weight_sparse, embedder));
        let calibrator = Arc::new(LogisticCalibrator { a: config.calib_a, b: config.calib_b });
        Self { config, reranker, calibrator }
    }

    pub fn with_plugins(
        config: StackConfig<F>,
        reranker: Arc<dyn Reranker<F>>,
        calibrator: Arc<dyn Calibrator<F>>,
    ) -> Self {
        Self { config, reranker, calibrator }
    }

    pub fn reranker(&self) -> &Arc<dyn Reranker<F>> {
        &self.reranker
    }

    /// Fused candidate list of size at most `k_fuse`: top `channel_depth`
    /// from each channel, reciprocal-rank fusion, ties by ascending doc_id.
    pub fn hybrid_search(&self, idx: &CorpusIndex<F>, query: &str) -> Vec<ScoredDoc<F>> {
        if idx.is_empty() {
            return Vec::new();
        }
        let query_tokens = tokenize(query);
        let sparse = bm25_search(idx, &query_tokens, self.config.channel_depth, &self.config);
        let sparse_ids: Vec<String> = sparse.iter().map(|c| c.doc_id.clone()).collect();
        let query_vec = idx.embed_query(query);
        let dense = dense_search(idx, &query_vec, self.config.channel_depth);
        let dense_ids: Vec<String> = dense.iter().map(|(id, _)| id.clone()).collect();

        let fused = rrf_fuse::<F>(&[sparse_ids, dense_ids], self.config.rrf_constant);
        fused
            .into_iter()
            .take(self.config.k_fuse)
            .enumerate()
            .map(|(i, (doc_id, _))| {
                let sparse_score = bm25_score_doc(idx, &query_tokens, &doc_id, &self.config);
                let dense_score = idx
                    .dense_vector(&doc_id)
                    .map(|v| dot(&query_vec, v))
                    .unwrap_or_else(F::zero);
                ScoredDoc {
                    doc_id,
                    sparse_score,
                    dense_score,
                    fused_rank: i + 1,
                    rerank_score: F::zero(),
                    calibrated: F::zero(),
                }
            })
            .collect()
    }

    /// Apply the re-ranker: fill `rerank_score` and stable-sort descending,
    /// so equal scores keep their fused order.
    pub fn rerank(&self, query: &str, mut candidates: Vec<ScoredDoc<F>>) -> Vec<ScoredDoc<F>> {
        let scores = self.reranker.rescore(query, &candidates);
        assert_eq!(
            scores.len(),
            candidates.len(),
            "re-ranker must score exactly the candidates it was given"
        );
        for (c, s) in candidates.iter_mut().zip(scores) {
            c.rerank_score = s;
        }
        candidates.sort_by(|a, b| {
            b.rerank_score.partial_cmp(&a.rerank_score).unwrap_or(std::cmp::Ordering::Equal)
        });
        candidates
    }

    /// Calibrated confidence for one re-ranker score.
    pub fn calibrate(&self, score: F) -> F {
        self.calibrator.calibrate(score)
    }

    /// Full path: fuse, re-rank, calibrate, and keep documents at or above
    /// the gate threshold, in descending calibrated order.
    pub fn retrieve(&self, idx: &CorpusIndex<F>, query: &str) -> Vec<ScoredDoc<F>> {
        let candidates = self.hybrid_search(idx, query);
        let mut reranked = self.rerank(query, candidates);
        for c in reranked.iter_mut() {
            c.calibrated = self.calibrator.calibrate(c.rerank_score);
        }
        reranked.retain(|c| c.calibrated >= self.config.gate_threshold);
        reranked
    }

    /// Stable identifier of the retrieval configuration: config values plus
    /// plugin and embedder identities.
    pub fn fingerprint(&self, idx: &CorpusIndex<F>) -> String {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        let material = format!(
            "{cfg}|reranker={}|calibrator={}|embedder={}:{}",
            self.reranker.name(),
            self.calibrator.name(),
            idx.embedder().name(),
            idx.embedder().dim(),
        );
        format!("{:016x}", fnv1a64(material.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DocSource, Document};
    use crate::rng::SplitMix64;

    fn doc(id: &str, title: &str, body: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: title.into(),
            body: body.into(),
            source: DocSource::Kb,
            anchors: None,
        }
    }

    fn cfg() -> StackConfig<f64> {
        StackConfig::default()
    }

    #[test]
    fn single_doc_score_equals_idf() {
        // tf=1 and len=avg_len collapse the BM25 term to exactly idf.
        let mut idx: CorpusIndex<f64> = CorpusIndex::new(64);
        idx.upsert(doc("only", "password reset", "owners manage access")).unwrap();
        let hits = bm25_search(&idx, &["password".to_string()], 10, &cfg());
        assert_eq!(hits.len(), 1);
        let idf = (1.0f64 + (1.0 - 1.0 + 0.5) / (1.0 + 0.5)).ln();
        assert!((hits[0].sparse_score - idf).abs() < 1e-12);
    }

    #[test]
    fn absent_token_yields_empty_result() {
        let mut idx: CorpusIndex<f64> = CorpusIndex::new(64);
        idx.upsert(doc("a", "alpha beta", "gamma")).unwrap();
        assert!(bm25_search(&idx, &["zulu".to_string()], 10, &cfg()).is_empty());
        assert!(bm25_search(&idx, &[], 10, &cfg()).is_empty());
    }

    /// Brute-force BM25 oracle: recompute df/tf/lengths by scanning raw
    /// documents, independent of the inverted index.
    fn brute_force_bm25(
        docs: &[Document],
        query_tokens: &[String],
        cfg: &StackConfig<f64>,
    ) -> Vec<(String, f64)> {
        let n = docs.len();
        let token_lists: Vec<(String, Vec<String>)> = docs
            .iter()
            .map(|d| (d.doc_id.clone(), tokenize(&d.indexed_text())))
            .collect();
        let avg = token_lists.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n as f64;
        let mut scored = Vec::new();
        for (id, tokens) in &token_lists {
            let mut score = 0.0;
            for q in query_tokens {
                let tf = tokens.iter().filter(|t| *t == q).count() as u32;
                if tf == 0 {
                    continue;
                }
                let df = token_lists.iter().filter(|(_, ts)| ts.iter().any(|t| t == q)).count();
                let idf = (1.0 + (n as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln();
                score += bm25_term(idf, tf, tokens.len(), avg, cfg.bm25_k1, cfg.bm25_b);
            }
            if score > 0.0 {
                scored.push((id.clone(), score));
            }
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
        });
        scored
    }

    fn random_corpus(n: usize, rng: &mut SplitMix64) -> Vec<Document> {
        let vocab = [
            "alpha", "beta", "gamma", "delta", "omega", "reset", "password", "portal", "token",
            "invoice", "export", "archive", "panel", "role", "owner", "analyst", "cluster",
            "backup", "queue", "policy",
        ];
        (0..n)
            .map(|i| {
                let tlen = 2 + rng.below(4);
                let blen = 5 + rng.below(20);
                let title: Vec<&str> = (0..tlen).map(|_| *rng.pick(&vocab)).collect();
                let body: Vec<&str> = (0..blen).map(|_| *rng.pick(&vocab)).collect();
                doc(&format!("d{i:04}"), &title.join(" "), &body.join(" "))
            })
            .collect()
    }

    #[test]
    fn bm25_matches_brute_force_on_a_random_corpus() {
        let mut rng = SplitMix64::new(0xB0_25);
        let docs = random_corpus(200, &mut rng);
        let mut idx: CorpusIndex<f64> = CorpusIndex::new(64);
        idx.upsert_all(docs.clone()).unwrap();
        let vocab = ["reset", "password", "portal", "owner", "invoice", "archive", "queue"];
        for _ in 0..50 {
            let qlen = 1 + rng.below(3);
            let q: Vec<String> = (0..qlen).map(|_| rng.pick(&vocab).to_string()).collect();
            let got = bm25_search(&idx, &q, 10, &cfg());
            let want = brute_force_bm25(&docs, &q, &cfg());
            assert_eq!(got.len(), want.len().min(10));
            for (g, w) in got.iter().zip(want.iter()) {
                assert_eq!(g.doc_id, w.0, "query {q:?}");
                assert!((g.sparse_score - w.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn removal_only_shifts_scores_through_global_stats() {
        let mut rng = SplitMix64::new(7);
        let docs = random_corpus(5, &mut rng);
        let mut idx: CorpusIndex<f64> = CorpusIndex::new(64);
        idx.upsert_all(docs.clone()).unwrap();
        let q = vec!["reset".to_string(), "password".to_string()];
        let before: Vec<String> =
            bm25_search(&idx, &q, 10, &cfg()).into_iter().map(|c| c.doc_id).collect();
        // remove a doc that did not match the query, if one exists
        let unmatched = docs.iter().find(|d| {
            let toks = tokenize(&d.indexed_text());
            !toks.contains(&"reset".to_string()) && !toks.contains(&"password".to_string())
        });
        if let Some(dropme) = unmatched {
            idx.remove(&dropme.doc_id).unwrap();
            let after = bm25_search(&idx, &q, 10, &cfg());
            let after_ids: Vec<String> = after.iter().map(|c| c.doc_id.clone()).collect();
            assert_eq!(before, after_ids, "match set and order survive unrelated removal");
            let remaining: Vec<Document> =
                docs.iter().filter(|d| d.doc_id != dropme.doc_id).cloned().collect();
            let oracle = brute_force_bm25(&remaining, &q, &cfg());
            for (g, w) in after.iter().zip(oracle.iter()) {
                assert_eq!(g.doc_id, w.0);
                assert!((g.sparse_score - w.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rrf_hand_computed_values() {
        let sparse = vec!["a".to_string(), "b".to_string()];
        let dense = vec!["a".to_string(), "c".to_string()];
        let fused = rrf_fuse::<f64>(&[sparse, dense], 60);
        // a is rank 1 in both channels; b and c are rank 1/rank 2 singles.
        let score_a = fused.iter().find(|(id, _)| id == "a").unwrap().1;
        assert!((score_a - 2.0 / 61.0).abs() < 1e-12);
        let score_b = fused.iter().find(|(id, _)| id == "b").unwrap().1;
        assert!((score_b - 1.0 / 62.0).abs() < 1e-12);
        assert_eq!(fused[0].0, "a");
    }

    #[test]
    fn sparse_only_rank_one_value() {
        let fused = rrf_fuse::<f64>(&[vec!["x".to_string()], vec![]], 60);
        assert_eq!(fused.len(), 1);
        assert!((fused[0].1 - 1.0 / 61.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_list_is_bounded_by_corpus_size() {
        let mut idx: CorpusIndex<f64> = CorpusIndex::new(64);
        idx.upsert(doc("a", "alpha", "alpha beta")).unwrap();
        idx.upsert(doc("b", "alpha", "alpha gamma")).unwrap();
        idx.upsert(doc("c", "alpha", "alpha delta")).unwrap();
        let stack = Stack::new(cfg());
        let candidates = stack.hybrid_search(&idx, "alpha");
        assert!(candidates.len() <= 3);
        // fused ranks are unique and 1-based
        let ranks: Vec<usize> = candidates.iter().map(|c| c.fused_rank).collect();
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), ranks.len());
        assert_eq!(ranks.first().copied(), Some(1));
    }

    #[test]
    fn singleton_minmax_is_one() {
        let candidate = ScoredDoc {
            doc_id: "x".to_string(),
            sparse_score: 0.0,
            dense_score: 0.6,
            fused_rank: 1,
            rerank_score: 0.0,
            calibrated: 0.0,
        };
        let reranker = LexicalDenseReranker::new(0.5, default_embedder::<f64>(64));
        let scores = reranker.rescore("whatever", &[candidate]);
        assert!((scores[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn all_zero_sparse_normalizes_to_zero_for_multiple_candidates() {
        let mk = |id: &str, dense: f64| ScoredDoc {
            doc_id: id.to_string(),
            sparse_score: 0.0,
            dense_score: dense,
            fused_rank: 1,
            rerank_score: 0.0,
            calibrated: 0.0,
        };
        let reranker = LexicalDenseReranker::new(0.5, default_embedder::<f64>(64));
        let scores = reranker.rescore("q", &[mk("a", 0.4), mk("b", 0.2)]);
        assert!((scores[0] - 0.2).abs() < 1e-12);
        assert!((scores[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_preserve_fused_order() {
        let mk = |id: &str, rank: usize| ScoredDoc {
            doc_id: id.to_string(),
            sparse_score: 1.0,
            dense_score: 0.5,
            fused_rank: rank,
            rerank_score: 0.0,
            calibrated: 0.0,
        };
        let stack = Stack::new(cfg());
        let out = stack.rerank("q", vec![mk("m", 1), mk("a", 2), mk("z", 3)]);
        let ids: Vec<&str> = out.iter().map(|c| c.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["m", "a", "z"]);
    }

    #[test]
    fn dominant_doc_stays_first_after_rerank() {
        let mk = |id: &str, sparse: f64, dense: f64, rank: usize| ScoredDoc {
            doc_id: id.to_string(),
            sparse_score: sparse,
            dense_score: dense,
            fused_rank: rank,
            rerank_score: 0.0,
            calibrated: 0.0,
        };
        let stack = Stack::new(cfg());
        let out = stack.rerank("q", vec![mk("top", 3.0, 0.9, 1), mk("mid", 1.0, 0.4, 2)]);
        assert_eq!(out[0].doc_id, "top");
    }

    #[test]
    fn logistic_calibration_reference_points() {
        let c = LogisticCalibrator::<f64> { a: 4.0, b: -2.0 };
        assert!((c.calibrate(0.5) - 0.5).abs() < 1e-12);
        let at_one = c.calibrate(1.0);
        assert!((at_one - 0.8807970779778823).abs() < 1e-12);
    }

    #[test]
    fn calibration_is_strictly_monotone_over_the_score_range() {
        // Re-ranker scores live in [0, 1]; sample ordered pairs there.
        let c = LogisticCalibrator::<f64> { a: 4.0, b: -2.0 };
        let mut rng = SplitMix64::new(0xCA1);
        for _ in 0..1000 {
            let s1 = rng.below(1000) as f64 / 1000.0;
            let s2 = s1 + (1 + rng.below(1000)) as f64 / 1_000_000.0;
            assert!(c.calibrate(s1) < c.calibrate(s2));
            let v = c.calibrate(s1);
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn gate_zero_keeps_everything_and_gate_one_keeps_nothing() {
        let mut idx: CorpusIndex<f64> = CorpusIndex::new(64);
        idx.upsert(doc("a", "password reset", "owners reset passwords here")).unwrap();
        idx.upsert(doc("b", "invoice export", "export invoices monthly")).unwrap();

        let mut open = cfg();
        open.gate_threshold = 0.0;
        let stack = Stack::new(open);
        let all = stack.retrieve(&idx, "password reset");
        let reranked =
            stack.rerank("password reset", stack.hybrid_search(&idx, "password reset"));
        assert_eq!(
            all.iter().map(|c| c.doc_id.clone()).collect::<Vec<_>>(),
            reranked.iter().map(|c| c.doc_id.clone()).collect::<Vec<_>>()
        );

        let mut shut = cfg();
        shut.gate_threshold = 1.0;
        let stack = Stack::new(shut);
        assert!(stack.retrieve(&idx, "password reset").is_empty());
    }

    #[test]
    fn planted_duplicate_wins_in_a_crowded_corpus() {
        let mut rng = SplitMix64::new(0xD0C);
        let mut docs = random_corpus(500, &mut rng);
        let query = "workspace owners rotate signing certificates quarterly";
        docs.push(doc("planted", query, query));
        let mut idx: CorpusIndex<f64> = CorpusIndex::new(256);
        idx.upsert_all(docs).unwrap();
        let stack = Stack::new(cfg());
        let gated = stack.retrieve(&idx, query);
        assert!(!gated.is_empty());
        assert_eq!(gated[0].doc_id, "planted");
        assert!(gated[0].calibrated >= stack.config.gate_threshold);
    }

    #[test]
    fn retrieval_is_deterministic() {
        let mut rng = SplitMix64::new(0xDE7);
        let docs = random_corpus(100, &mut rng);
        let mut idx: CorpusIndex<f64> = CorpusIndex::new(128);
        idx.upsert_all(docs).unwrap();
        let stack = Stack::new(cfg());
        let a = stack.retrieve(&idx, "reset password portal owner");
        let b = stack.retrieve(&idx, "reset password portal owner");
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
