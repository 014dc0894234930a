//! The hybrid corpus index: inverted postings for BM25, dense vectors for
//! cosine search, and exact global statistics (idf, average length)
//! recomputed on every mutation.
//!
//! Only `documents.jsonl` is canonical on disk; postings, vectors, and
//! statistics are rebuilt on load.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;

use crate::model::Document;
use crate::scalar::Scalar;
use crate::stack::embed::{default_embedder, Embedder};
use crate::stack::StackError;
use crate::text::{fnv1a64, tokenize};

/// One posting: a document and the term frequency inside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Posting {
    pub doc_id: String,
    pub tf: u32,
}

/// Sparse + dense retrieval state over a document collection.
#[derive(Clone)]
pub struct CorpusIndex<F: Scalar> {
    documents: BTreeMap<String, Document>,
    inverted: BTreeMap<String, Vec<Posting>>,
    doc_lengths: BTreeMap<String, usize>,
    avg_doc_length: F,
    dense: BTreeMap<String, Vec<F>>,
    idf: BTreeMap<String, F>,
    embedder: Arc<dyn Embedder<F>>,
}

impl<F: Scalar> PartialEq for CorpusIndex<F> {
    fn eq(&self, other: &Self) -> bool {
        self.documents == other.documents
            && self.inverted == other.inverted
            && self.doc_lengths == other.doc_lengths
            && self.avg_doc_length == other.avg_doc_length
            && self.dense == other.dense
            && self.idf == other.idf
    }
}

impl<F: Scalar> std::fmt::Debug for CorpusIndex<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorpusIndex")
            .field("documents", &self.documents.len())
            .field("terms", &self.inverted.len())
            .field("avg_doc_length", &self.avg_doc_length)
            .finish()
    }
}

impl<F: Scalar> CorpusIndex<F> {
    pub fn new(embed_dim: usize) -> Self {
        Self::with_embedder(default_embedder(embed_dim))
    }

    pub fn with_embedder(embedder: Arc<dyn Embedder<F>>) -> Self {
        Self {
            documents: BTreeMap::new(),
            inverted: BTreeMap::new(),
            doc_lengths: BTreeMap::new(),
            avg_doc_length: F::zero(),
            dense: BTreeMap::new(),
            idf: BTreeMap::new(),
            embedder,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.documents.contains_key(doc_id)
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.get(doc_id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.documents.keys().map(String::as_str)
    }

    pub fn avg_doc_length(&self) -> F {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<usize> {
        self.doc_lengths.get(doc_id).copied()
    }

    pub fn idf(&self, token: &str) -> Option<F> {
        self.idf.get(token).copied()
    }

    pub fn postings(&self, token: &str) -> Option<&[Posting]> {
        self.inverted.get(token).map(Vec::as_slice)
    }

    pub fn dense_vector(&self, doc_id: &str) -> Option<&[F]> {
        self.dense.get(doc_id).map(Vec::as_slice)
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder<F>> {
        &self.embedder
    }

    pub fn embed_query(&self, query: &str) -> Vec<F> {
        self.embedder.embed(query)
    }

    /// Insert or replace a document. Idempotent for identical input.
    pub fn upsert(&mut self, doc: Document) -> Result<(), StackError> {
        self.insert_raw(doc)?;
        self.recompute_derived();
        Ok(())
    }

    /// Insert or replace many documents with one statistics pass.
    pub fn upsert_all<I: IntoIterator<Item = Document>>(
        &mut self,
        docs: I,
    ) -> Result<(), StackError> {
        for doc in docs {
            self.insert_raw(doc)?;
        }
        self.recompute_derived();
        Ok(())
    }

    /// Remove a document and every trace of it.
    pub fn remove(&mut self, doc_id: &str) -> Result<Document, StackError> {
        let doc = self
            .documents
            .remove(doc_id)
            .ok_or_else(|| StackError::NotFound(doc_id.to_string()))?;
        self.drop_postings(doc_id);
        self.doc_lengths.remove(doc_id);
        self.dense.remove(doc_id);
        self.recompute_derived();
        Ok(doc)
    }

    /// Temporary, isolated view of the corpus with `docs` added. The base
    /// index is untouched; dropping the session reverts everything. This is
    /// how concurrent candidate optimizations stay invisible to each other.
    pub fn scoped_insert(&self, docs: &[Document]) -> Result<ScopedInsertion<F>, StackError> {
        let mut index = self.clone();
        index.upsert_all(docs.iter().cloned())?;
        Ok(ScopedInsertion { index })
    }

    /// Stable hash over the canonical document set and the embedder
    /// identity. Derived state is a pure function of both, so equal hashes
    /// mean equal retrieval behavior.
    pub fn state_hash(&self) -> u64 {
        let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
        acc ^= fnv1a64(self.embedder.name().as_bytes());
        acc = acc.wrapping_mul(0x100_0000_01b3);
        acc ^= self.embedder.dim() as u64;
        for doc in self.documents.values() {
            let line = serde_json::to_string(doc).expect("document serializes");
            acc ^= fnv1a64(line.as_bytes());
            acc = acc.wrapping_mul(0x100_0000_01b3);
        }
        acc
    }

    /// Write the canonical store (`documents.jsonl`, doc_id order) into a
    /// directory.
    pub fn save(&self, dir: &Path) -> Result<(), StackError> {
        std::fs::create_dir_all(dir)?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("documents.jsonl"))?);
        for doc in self.documents.values() {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rebuild an index from a directory written by [`CorpusIndex::save`].
    pub fn load(dir: &Path, embedder: Arc<dyn Embedder<F>>) -> Result<Self, StackError> {
        let file = std::fs::File::open(dir.join("documents.jsonl"))?;
        let mut index = Self::with_embedder(embedder);
        let mut docs = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            docs.push(serde_json::from_str::<Document>(&line)?);
        }
        index.upsert_all(docs)?;
        Ok(index)
    }

    fn insert_raw(&mut self, doc: Document) -> Result<(), StackError> {
        if doc.doc_id.trim().is_empty() {
            return Err(StackError::InvalidDocument("empty doc_id".into()));
        }
        if self.documents.contains_key(&doc.doc_id) {
            self.drop_postings(&doc.doc_id);
        }
        let text = doc.indexed_text();
        let tokens = tokenize(&text);
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t.as_str()).or_insert(0) += 1;
        }
        for (token, count) in tf {
            let postings = self.inverted.entry(token.to_string()).or_default();
            let pos = postings
                .binary_search_by(|p| p.doc_id.as_str().cmp(&doc.doc_id))
                .unwrap_or_else(|i| i);
            postings.insert(pos, Posting { doc_id: doc.doc_id.clone(), tf: count });
        }
        self.doc_lengths.insert(doc.doc_id.clone(), tokens.len());
        self.dense.insert(doc.doc_id.clone(), self.embedder.embed(&text));
        self.documents.insert(doc.doc_id.clone(), doc);
        Ok(())
    }

    fn drop_postings(&mut self, doc_id: &str) {
        let mut empty_terms = Vec::new();
        for (term, postings) in self.inverted.iter_mut() {
            if let Ok(pos) = postings.binary_search_by(|p| p.doc_id.as_str().cmp(doc_id)) {
                postings.remove(pos);
            }
            if postings.is_empty() {
                empty_terms.push(term.clone());
            }
        }
        for term in empty_terms {
            self.inverted.remove(&term);
        }
    }

    /// Exact recomputation of the average document length and every idf
    /// value. No incremental approximations.
    fn recompute_derived(&mut self) {
        let n = self.doc_lengths.len();
        if n == 0 {
            self.avg_doc_length = F::zero();
            self.idf.clear();
            return;
        }
        let total: usize = self.doc_lengths.values().sum();
        self.avg_doc_length = F::lit(total as f64 / n as f64);
        self.idf = self
            .inverted
            .iter()
            .map(|(term, postings)| (term.clone(), bm25_idf::<F>(n, postings.len())))
            .collect();
    }
}

/// BM25 idf: `ln(1 + (N − df + 0.5) / (df + 0.5))`.
pub fn bm25_idf<F: Scalar>(n_docs: usize, df: usize) -> F {
    let n = n_docs as f64;
    let d = df as f64;
    F::lit((1.0 + (n - d + 0.5) / (d + 0.5)).ln())
}

/// An isolated index snapshot holding temporarily inserted candidates.
/// Read-only; dropping it discards the insertions.
pub struct ScopedInsertion<F: Scalar> {
    index: CorpusIndex<F>,
}

impl<F: Scalar> Deref for ScopedInsertion<F> {
    type Target = CorpusIndex<F>;

    fn deref(&self) -> &Self::Target {
        &self.index
    }
}

impl<F: Scalar> ScopedInsertion<F> {
    pub fn index(&self) -> &CorpusIndex<F> {
        &self.index
    }
}
