//! The unchanged "production" agent the optimization loop treats as a test
//! harness: query expansion, iterative retrieval, answer generation with
//! citations. Running the agent never mutates the index; every run yields a
//! full [`RagTrace`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::Document;
use crate::provider::{Provider, TaskOutput, TaskPayload, TextTask};
use crate::rng::{mix, ns};
use crate::text::{fnv1a64, tokenize};
use crate::{Index, Scored, Search};

/// Harness parameters. The smallest values that make iterative retrieval
/// observable: two rounds, a three-document floor, two expansions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub max_rounds: u32,
    pub min_docs: usize,
    pub expansions: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { max_rounds: 2, min_docs: 3, expansions: 2 }
    }
}

/// Gated results of one retrieval round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub queries: Vec<String>,
    pub gated: Vec<Scored>,
}

/// One full agent run: expansions, per-round gated documents, the merged
/// gated set handed to the generator, the answer, and its citations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagTrace {
    pub input_query: String,
    pub expanded_queries: Vec<String>,
    pub rounds: Vec<RoundTrace>,
    pub final_gated: Vec<Scored>,
    pub answer: String,
    pub citations: Vec<String>,
    pub nugget_retrieved: bool,
    pub nugget_cited: bool,
    pub config_fingerprint: String,
    pub groundedness_violations: u32,
}

/// The query plus up to `expansions` provider paraphrases, original first,
/// duplicates removed. Expansion is best-effort: on provider failure the
/// query stands alone.
pub fn expand_query(
    query: &str,
    provider: &Provider,
    seed: u64,
    expansions: usize,
) -> Vec<String> {
    let mut out = vec![query.to_string()];
    if expansions == 0 {
        return out;
    }
    let task = TextTask {
        payload: TaskPayload::Paraphrase {
            query: query.to_string(),
            count: expansions.min(5),
            vocabulary: vec![],
        },
        seed,
    };
    if let Ok(TaskOutput::Paraphrases(paraphrases)) = provider.execute(&task) {
        for p in paraphrases {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// Stable fingerprint of everything that shapes agent behavior except the
/// inserted nugget: stack config and plugins, embedder, agent parameters,
/// and the provider backend.
pub fn config_fingerprint(
    search: &Search,
    idx: &Index,
    agent_cfg: &AgentConfig,
    provider: &Provider,
) -> String {
    let material = format!(
        "{}|agent={}|provider={}",
        search.fingerprint(idx),
        serde_json::to_string(agent_cfg).expect("agent config serializes"),
        provider.fingerprint_tag(),
    );
    format!("{:016x}", fnv1a64(material.as_bytes()))
}

/// Run the agent for one query against a read-only index snapshot.
///
/// Round 1 retrieves for every expanded query and merges the gated lists,
/// keeping the best calibrated score per document. When fewer than
/// `min_docs` documents survive and round 1 was not empty, one follow-up
/// round runs with the query extended by the two highest-idf tokens of the
/// best round-1 document. The generator sees the merged gated set.
pub fn run_agent(
    idx: &Index,
    query: &str,
    search: &Search,
    agent_cfg: &AgentConfig,
    provider: &Provider,
    seed: u64,
    nugget_doc_id: Option<&str>,
) -> RagTrace {
    let fingerprint = config_fingerprint(search, idx, agent_cfg, provider);
    let expansion_seed = mix(&[seed, fnv1a64(query.as_bytes()), ns::EXPANSION]);
    let expanded = expand_query(query, provider, expansion_seed, agent_cfg.expansions);

    let mut merged: BTreeMap<String, Scored> = BTreeMap::new();
    let mut rounds: Vec<RoundTrace> = Vec::new();

    let round1: Vec<Scored> = {
        for eq in &expanded {
            for hit in search.retrieve(idx, eq) {
                merge_hit(&mut merged, hit);
            }
        }
        sorted_gated(&merged)
    };
    rounds.push(RoundTrace { queries: expanded.clone(), gated: round1.clone() });

    if agent_cfg.max_rounds >= 2 && !round1.is_empty() && round1.len() < agent_cfg.min_docs {
        if let Some(followup) = followup_query(idx, query, &round1) {
            for hit in search.retrieve(idx, &followup) {
                merge_hit(&mut merged, hit);
            }
            let gated = sorted_gated(&merged);
            rounds.push(RoundTrace { queries: vec![followup], gated });
        }
    }

    let final_gated = sorted_gated(&merged);
    let gated_docs: Vec<Document> = final_gated
        .iter()
        .filter_map(|s| idx.get(&s.doc_id).cloned())
        .collect();

    let answer_task = TextTask {
        payload: TaskPayload::GenerateAnswer { query: query.to_string(), gated_docs },
        seed: mix(&[seed, fnv1a64(query.as_bytes()), ns::ANSWER]),
    };
    let (answer, raw_citations) = match provider.execute(&answer_task) {
        Ok(TaskOutput::Answer(a)) => (a.text, a.citations),
        // generation is best-effort; a failed provider yields a refusal
        _ => (crate::provider::sim::REFUSAL.to_string(), vec![]),
    };

    let (citations, groundedness_violations) = extract_citations(&raw_citations, &final_gated);

    let nugget_retrieved = nugget_doc_id
        .map(|id| final_gated.iter().any(|s| s.doc_id == id))
        .unwrap_or(false);
    let nugget_cited =
        nugget_doc_id.map(|id| citations.iter().any(|c| c == id)).unwrap_or(false);

    RagTrace {
        input_query: query.to_string(),
        expanded_queries: expanded,
        rounds,
        final_gated,
        answer,
        citations,
        nugget_retrieved,
        nugget_cited,
        config_fingerprint: fingerprint,
        groundedness_violations,
    }
}

/// Validate and normalize citations: keep only gated documents, preserve
/// order, drop duplicates. Each dropped non-gated citation counts as one
/// groundedness violation.
pub fn extract_citations(raw: &[String], gated: &[Scored]) -> (Vec<String>, u32) {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    let mut violations = 0u32;
    for c in raw {
        if seen.contains_key(c) {
            continue;
        }
        if gated.iter().any(|s| &s.doc_id == c) {
            seen.insert(c.clone(), ());
            out.push(c.clone());
        } else {
            violations += 1;
        }
    }
    (out, violations)
}

fn merge_hit(merged: &mut BTreeMap<String, Scored>, hit: Scored) {
    match merged.get_mut(&hit.doc_id) {
        Some(existing) => {
            if hit.calibrated > existing.calibrated {
                *existing = hit;
            }
        }
        None => {
            merged.insert(hit.doc_id.clone(), hit);
        }
    }
}

fn sorted_gated(merged: &BTreeMap<String, Scored>) -> Vec<Scored> {
    let mut out: Vec<Scored> = merged.values().cloned().collect();
    out.sort_by(|a, b| {
        b.calibrated
            .partial_cmp(&a.calibrated)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    out
}

/// Follow-up query: the original query plus the two highest-idf tokens of
/// the best gated document that the query does not already contain.
fn followup_query(idx: &Index, query: &str, round1: &[Scored]) -> Option<String> {
    let best = round1.first()?;
    let doc = idx.get(&best.doc_id)?;
    let query_tokens: std::collections::BTreeSet<String> = tokenize(query).into_iter().collect();
    let mut candidates: Vec<(String, f64)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for t in tokenize(&doc.indexed_text()) {
        if query_tokens.contains(&t) || !seen.insert(t.clone()) {
            continue;
        }
        if let Some(idf) = idx.idf(&t) {
            candidates.push((t, idf));
        }
    }
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0))
    });
    let picked: Vec<String> = candidates.into_iter().take(2).map(|(t, _)| t).collect();
    if picked.is_empty() {
        return None;
    }
    Some(format!("{} {}", query, picked.join(" ")))
}
