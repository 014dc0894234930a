//! The measurement protocol: in-sample and held-out evaluation, historical
//! paraphrase mining, synthetic paraphrases, negative control, the
//! four-axis answer judge, and aggregated reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_agent, AgentConfig, RagTrace};
use crate::model::{nugget_doc_id, render_indexable, DocSource, Document, Nugget, Variant};
use crate::pipeline::{
    build_variant, optimize_nugget, OptimizeConfig, OptimizeContext, PipelineError,
};
use crate::provider::{Provider, ProviderError, TaskOutput, TaskPayload, TextTask};
use crate::rng::{mix, ns};
use crate::stack::dot;
use crate::text::fnv1a64;
use crate::{Index, Search};

// ---------------------------------------------------------------------------
// judge types

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compliance {
    Addresses,
    Partial,
    Misses,
    Contradicts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Faithfulness {
    Faithful,
    Partial,
    Unfaithful,
    #[serde(rename = "n_a")]
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regression {
    Preserved,
    MinorRegression,
    MajorRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Groundedness {
    Grounded,
    MinorIssues,
    Hallucinated,
}

/// Four independent axes per judged answer. An absent nugget forces
/// compliance = misses and faithfulness = n_a.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeLabels {
    pub compliance: Compliance,
    pub faithfulness: Faithfulness,
    pub regression: Regression,
    pub groundedness: Groundedness,
}

/// Everything the judge sees: the original exchange, the feedback, the
/// nugget, the retrieved context, and the answer under evaluation. The
/// optional wrong-claim string lets fixtures pin the contradiction rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeInput {
    pub original_question: String,
    pub original_answer: String,
    pub feedback_text: String,
    pub nugget: Nugget,
    pub retrieved_context: Vec<Document>,
    pub answer: String,
    pub nugget_doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrong_claim: Option<String>,
}

/// Route a judge input through the provider.
pub fn judge_answer(input: &JudgeInput, provider: &Provider) -> Result<JudgeLabels, ProviderError> {
    let task = TextTask {
        payload: TaskPayload::Judge { input: input.clone() },
        seed: fnv1a64(input.answer.as_bytes()),
    };
    match provider.execute(&task)? {
        TaskOutput::Judgement(labels) => Ok(labels),
        _ => Err(ProviderError::Schema {
            reason: "expected judge labels".to_string(),
            raw: String::new(),
        }),
    }
}

// ---------------------------------------------------------------------------
// held-out query construction

/// One production query log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: String,
}

/// Mine historical paraphrases of the trigger from a query log: embed
/// everything, keep the top 50 nearest neighbors with cosine above 0.75,
/// re-rank the survivors against the trigger and keep scores above 0.85.
/// The trigger itself is excluded.
pub fn mine_historical(
    log: &[QueryRecord],
    trigger_query: &str,
    idx: &Index,
    search: &Search,
) -> Vec<String> {
    let embedder = idx.embedder();
    let qv = embedder.embed(trigger_query);
    let mut scored: Vec<(usize, f64)> = log
        .iter()
        .enumerate()
        .filter(|(_, r)| r.query != trigger_query)
        .map(|(i, r)| (i, dot(&qv, &embedder.embed(&r.query))))
        .filter(|(_, cos)| *cos > 0.75)
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(50);
    scored
        .into_iter()
        .filter(|(i, _)| {
            let pair = search.reranker().score_pair(trigger_query, &log[*i].query);
            pair > 0.85
        })
        .map(|(i, _)| log[i].query.clone())
        .collect()
}

/// Synthetic paraphrases grounded in corpus vocabulary: harvest high-idf
/// tokens from the top documents for the trigger, then run the paraphrase
/// task under a seed namespace distinct from construction-time anchors.
pub fn gen_synthetic_paraphrases(
    trigger_query: &str,
    idx: &Index,
    count: usize,
    seed: u64,
    search: &Search,
    provider: &Provider,
) -> Result<Vec<String>, ProviderError> {
    let vocabulary = if idx.is_empty() {
        Vec::new()
    } else {
        let candidates = search.rerank(trigger_query, search.hybrid_search(idx, trigger_query));
        let mut vocab: Vec<(String, f64)> = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for c in candidates.iter().take(5) {
            if let Some(doc) = idx.get(&c.doc_id) {
                for t in crate::text::content_tokens(&doc.indexed_text()) {
                    if seen.insert(t.clone()) {
                        if let Some(idf) = idx.idf(&t) {
                            vocab.push((t, idf));
                        }
                    }
                }
            }
        }
        vocab.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        vocab.into_iter().take(10).map(|(t, _)| t).collect()
    };

    let task = TextTask {
        payload: TaskPayload::Paraphrase {
            query: trigger_query.to_string(),
            count: count.clamp(1, 5),
            vocabulary,
        },
        seed: mix(&[seed, ns::SYNTHETIC_HELDOUT]),
    };
    match provider.execute(&task)? {
        TaskOutput::Paraphrases(p) => Ok(p),
        _ => Err(ProviderError::Schema {
            reason: "expected paraphrases".to_string(),
            raw: String::new(),
        }),
    }
}

// ---------------------------------------------------------------------------
// experiment types

/// Where a replayed query came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    InSample,
    Historical,
    Synthetic,
}

impl std::fmt::Display for QuerySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            QuerySource::InSample => "in_sample",
            QuerySource::Historical => "historical",
            QuerySource::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

/// One replayable query bound to the nugget it should surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedQuery {
    pub text: String,
    pub source: QuerySource,
    pub nugget_id: String,
}

/// One evaluable correction: the nugget plus the event fields the judge
/// needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub nugget: Nugget,
    pub trigger_query: String,
    pub original_answer: String,
    pub feedback_text: String,
}

/// Hits for one seeded run over one (variant, source) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub seed: u64,
    pub total: u32,
    pub retrieved: u32,
    pub cited: u32,
}

/// Judge label histograms for one cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeHistogram {
    pub compliance: BTreeMap<String, u64>,
    pub faithfulness: BTreeMap<String, u64>,
    pub regression: BTreeMap<String, u64>,
    pub groundedness: BTreeMap<String, u64>,
    pub unjudged: u64,
}

impl JudgeHistogram {
    fn record(&mut self, labels: &JudgeLabels) {
        fn bump<T: Serialize>(map: &mut BTreeMap<String, u64>, v: &T) {
            let key = serde_json::to_value(v)
                .ok()
                .and_then(|x| x.as_str().map(str::to_string))
                .unwrap_or_else(|| "unknown".to_string());
            *map.entry(key).or_insert(0) += 1;
        }
        bump(&mut self.compliance, &labels.compliance);
        bump(&mut self.faithfulness, &labels.faithfulness);
        bump(&mut self.regression, &labels.regression);
        bump(&mut self.groundedness, &labels.groundedness);
    }

    fn merge(&mut self, other: &JudgeHistogram) {
        for (k, v) in &other.compliance {
            *self.compliance.entry(k.clone()).or_insert(0) += v;
        }
        for (k, v) in &other.faithfulness {
            *self.faithfulness.entry(k.clone()).or_insert(0) += v;
        }
        for (k, v) in &other.regression {
            *self.regression.entry(k.clone()).or_insert(0) += v;
        }
        for (k, v) in &other.groundedness {
            *self.groundedness.entry(k.clone()).or_insert(0) += v;
        }
        self.unjudged += other.unjudged;
    }
}

/// Per-(variant, source) evaluation output across the seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSlice {
    pub variant: Variant,
    pub source: QuerySource,
    pub samples: Vec<RunSample>,
    pub judge: JudgeHistogram,
    pub config_fingerprint: String,
}

/// One aggregated report row: percent rates with mean and sample standard
/// deviation over the runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub source: QuerySource,
    pub runs: usize,
    pub retrieval_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_std: Option<f64>,
    pub citation_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citation_std: Option<f64>,
    pub judge: JudgeHistogram,
}

/// Negative-control outcome: counts plus every flagged trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeControlReport {
    pub total_queries: u32,
    pub retrieved_count: u32,
    pub cited_count: u32,
    pub flagged: Vec<RagTrace>,
}

/// The full report: deterministic row ordering (variant A to E, source
/// in-sample, historical, synthetic), run metadata, and optionally the
/// negative control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub seeds: Vec<u64>,
    pub config_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_control: Option<NegativeControlSummary>,
}

/// Counts-only view of the negative control embedded in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeControlSummary {
    pub total_queries: u32,
    pub retrieved_count: u32,
    pub cited_count: u32,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("experiment isolation failure: {0}")]
    Isolation(String),
    #[error("cross-config aggregation rejected: mixed fingerprints")]
    MixedFingerprints,
    #[error("nothing to aggregate")]
    Empty,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Stack(#[from] crate::stack::StackError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

// ---------------------------------------------------------------------------
// experiment execution

/// Run one variant over the tagged queries for every seed: build or
/// optimize the candidates, scoped-insert them all, replay every query
/// with the agent, record retrieval/citation flags and judge labels, and
/// verify the base index is byte-identical afterwards.
pub fn eval_variant(
    items: &[EvalItem],
    variant: Variant,
    queries: &[TaggedQuery],
    idx: &Index,
    search: &Search,
    agent_cfg: &AgentConfig,
    provider: &Provider,
    optimize_cfg: &OptimizeConfig,
    seeds: &[u64],
) -> Result<Vec<ReportSlice>, EvalError> {
    let fingerprint = crate::agent::config_fingerprint(search, idx, agent_cfg, provider);
    let item_by_id: BTreeMap<&str, &EvalItem> =
        items.iter().map(|i| (i.nugget.nugget_id.as_str(), i)).collect();

    let mut samples: BTreeMap<QuerySource, Vec<RunSample>> = BTreeMap::new();
    let mut histograms: BTreeMap<QuerySource, JudgeHistogram> = BTreeMap::new();

    for &run_seed in seeds {
        let hash_before = idx.state_hash();

        let mut rendered: Vec<Document> = Vec::with_capacity(items.len());
        for item in items {
            let item_seed = mix(&[
                run_seed,
                ns::VARIANT_BUILD,
                fnv1a64(item.nugget.nugget_id.as_bytes()),
                variant as u64,
            ]);
            let candidate = match variant {
                Variant::E => {
                    // each candidate is optimized against the corpus as it
                    // stands, including nuggets added before it
                    let base = idx.scoped_insert(&rendered)?;
                    let ctx = OptimizeContext {
                        index: base.index(),
                        search,
                        agent: agent_cfg,
                        provider,
                        config: optimize_cfg,
                    };
                    optimize_nugget(
                        &ctx,
                        &item.nugget,
                        &item.trigger_query,
                        item_seed,
                        Some(&item.feedback_text),
                    )?
                    .0
                }
                v => build_variant(&item.nugget, &item.trigger_query, v, item_seed, provider)?,
            };
            rendered.push(
                render_indexable(&candidate)
                    .map_err(|e| PipelineError::InvalidCandidate(e.to_string()))?,
            );
        }

        let session = idx.scoped_insert(&rendered)?;
        let mut counts: BTreeMap<QuerySource, (u32, u32, u32)> = BTreeMap::new();
        for q in queries {
            let doc_id = nugget_doc_id(&q.nugget_id);
            let trace = run_agent(
                session.index(),
                &q.text,
                search,
                agent_cfg,
                provider,
                mix(&[run_seed, fnv1a64(q.text.as_bytes())]),
                Some(&doc_id),
            );
            let entry = counts.entry(q.source).or_insert((0, 0, 0));
            entry.0 += 1;
            if trace.nugget_retrieved {
                entry.1 += 1;
            }
            if trace.nugget_cited {
                entry.2 += 1;
            }

            if let Some(item) = item_by_id.get(q.nugget_id.as_str()) {
                let context: Vec<Document> = trace
                    .final_gated
                    .iter()
                    .filter_map(|s| session.index().get(&s.doc_id).cloned())
                    .collect();
                let input = JudgeInput {
                    original_question: item.trigger_query.clone(),
                    original_answer: item.original_answer.clone(),
                    feedback_text: item.feedback_text.clone(),
                    nugget: item.nugget.clone(),
                    retrieved_context: context,
                    answer: trace.answer.clone(),
                    nugget_doc_id: doc_id.clone(),
                    wrong_claim: None,
                };
                let hist = histograms.entry(q.source).or_default();
                match judge_answer(&input, provider) {
                    Ok(labels) => hist.record(&labels),
                    Err(_) => hist.unjudged += 1,
                }
            }
        }
        drop(session);

        if idx.state_hash() != hash_before {
            return Err(EvalError::Isolation(format!(
                "index hash changed during variant {variant} run with seed {run_seed}"
            )));
        }

        for (source, (total, retrieved, cited)) in counts {
            samples.entry(source).or_default().push(RunSample {
                seed: run_seed,
                total,
                retrieved,
                cited,
            });
        }
    }

    Ok(samples
        .into_iter()
        .map(|(source, samples)| ReportSlice {
            variant,
            source,
            samples,
            judge: histograms.remove(&source).unwrap_or_default(),
            config_fingerprint: fingerprint.clone(),
        })
        .collect())
}

/// Replay unrelated traffic against an index that already contains the
/// inserted nuggets; count and emit every trace that gated or cited any
/// nugget document.
pub fn negative_control(
    idx: &Index,
    queries: &[String],
    search: &Search,
    agent_cfg: &AgentConfig,
    provider: &Provider,
    seed: u64,
) -> NegativeControlReport {
    let mut report = NegativeControlReport {
        total_queries: queries.len() as u32,
        retrieved_count: 0,
        cited_count: 0,
        flagged: Vec::new(),
    };
    for q in queries {
        let trace = run_agent(
            idx,
            q,
            search,
            agent_cfg,
            provider,
            mix(&[seed, fnv1a64(q.as_bytes())]),
            None,
        );
        let retrieved_nugget = trace
            .final_gated
            .iter()
            .any(|s| idx.get(&s.doc_id).map(|d| d.source == DocSource::Nugget).unwrap_or(false));
        let cited_nugget = trace
            .citations
            .iter()
            .any(|c| idx.get(c).map(|d| d.source == DocSource::Nugget).unwrap_or(false));
        if retrieved_nugget {
            report.retrieved_count += 1;
            report.flagged.push(trace.clone());
        }
        if cited_nugget {
            report.cited_count += 1;
        }
    }
    report
}

// ---------------------------------------------------------------------------
// aggregation and rendering

fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (0.0, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, Some(var.sqrt()))
}

/// Merge slices into the final report. Slices from different configuration
/// fingerprints never aggregate.
pub fn aggregate_report(slices: &[ReportSlice]) -> Result<EvalReport, EvalError> {
    if slices.is_empty() {
        return Err(EvalError::Empty);
    }
    let fingerprint = slices[0].config_fingerprint.clone();
    if slices.iter().any(|s| s.config_fingerprint != fingerprint) {
        return Err(EvalError::MixedFingerprints);
    }

    let mut grouped: BTreeMap<(Variant, QuerySource), (Vec<RunSample>, JudgeHistogram)> =
        BTreeMap::new();
    for slice in slices {
        let entry = grouped.entry((slice.variant, slice.source)).or_default();
        entry.0.extend(slice.samples.iter().cloned());
        entry.1.merge(&slice.judge);
    }

    let mut seeds: Vec<u64> = Vec::new();
    let mut rows = Vec::new();
    for ((variant, source), (samples, judge)) in grouped {
        for s in &samples {
            if !seeds.contains(&s.seed) {
                seeds.push(s.seed);
            }
        }
        let retrieval: Vec<f64> = samples
            .iter()
            .map(|s| if s.total == 0 { 0.0 } else { 100.0 * s.retrieved as f64 / s.total as f64 })
            .collect();
        let citation: Vec<f64> = samples
            .iter()
            .map(|s| if s.total == 0 { 0.0 } else { 100.0 * s.cited as f64 / s.total as f64 })
            .collect();
        let (retrieval_mean, retrieval_std) = mean_std(&retrieval);
        let (citation_mean, citation_std) = mean_std(&citation);
        rows.push(ReportRow {
            variant,
            source,
            runs: samples.len(),
            retrieval_mean,
            retrieval_std,
            citation_mean,
            citation_std,
            judge,
        });
    }

    Ok(EvalReport { rows, seeds, config_fingerprint: fingerprint, negative_control: None })
}

/// Plain-text table of the report rows.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:<11} {:>6} {:>18} {:>18}\n",
        "variant", "source", "runs", "retrieval %", "citation %"
    ));
    for row in &report.rows {
        let fmt = |mean: f64, std: Option<f64>| match std {
            Some(s) => format!("{mean:.1} ± {s:.1}"),
            None => format!("{mean:.1}"),
        };
        out.push_str(&format!(
            "{:<8} {:<11} {:>6} {:>18} {:>18}\n",
            row.variant.to_string(),
            row.source.to_string(),
            row.runs,
            fmt(row.retrieval_mean, row.retrieval_std),
            fmt(row.citation_mean, row.citation_std),
        ));
    }
    if let Some(nc) = &report.negative_control {
        out.push_str(&format!(
            "negative control: {}/{} retrieved, {}/{} cited\n",
            nc.retrieved_count, nc.total_queries, nc.cited_count, nc.total_queries
        ));
    }
    out
}

/// CSV rows: one line per (variant, source, metric).
pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from("variant,source,metric,mean,std,runs\n");
    for row in &report.rows {
        let std_str = |s: Option<f64>| s.map(|v| format!("{v:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},retrieval,{:.6},{},{}\n",
            row.variant,
            row.source,
            row.retrieval_mean,
            std_str(row.retrieval_std),
            row.runs
        ));
        out.push_str(&format!(
            "{},{},citation,{:.6},{},{}\n",
            row.variant,
            row.source,
            row.citation_mean,
            std_str(row.citation_std),
            row.runs
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// experiment preparation and execution

/// Raw experiment inputs: the corpus, the feedback stream, and the query
/// log used for historical mining.
pub struct ExperimentInputs<'a> {
    pub corpus: &'a [Document],
    pub events: &'a [crate::model::FeedbackEvent],
    pub query_log: &'a [QueryRecord],
}

/// A prepared experiment: the built index, the evaluable items, and the
/// tagged replay queries.
pub struct Experiment {
    pub index: Index,
    pub items: Vec<EvalItem>,
    pub queries: Vec<TaggedQuery>,
    /// Events the classifier skipped, with reasons.
    pub skipped_events: Vec<(String, String)>,
}

/// Build the index, extract nuggets from the feedback stream, and
/// construct the tagged query set for the requested sources. The held-out
/// set is fixed once here; seeded runs vary only candidate construction.
pub fn prepare_experiment(
    inputs: &ExperimentInputs<'_>,
    sources: &[QuerySource],
    synthetic_per_event: usize,
    seed: u64,
    search: &Search,
    provider: &Provider,
) -> Result<Experiment, EvalError> {
    let mut index = Index::new(search.config.embed_dim);
    index.upsert_all(inputs.corpus.iter().cloned())?;

    let mut items = Vec::new();
    let mut queries = Vec::new();
    let mut skipped = Vec::new();

    for event in inputs.events {
        let result = match crate::pipeline::filter_actionable(event, provider) {
            Ok(r) => r,
            Err(e) => {
                skipped.push((event.event_id.clone(), format!("unprocessed: {e}")));
                continue;
            }
        };
        let Some(article) = result.article.filter(|_| result.kb_candidate) else {
            skipped.push((event.event_id.clone(), result.reason));
            continue;
        };
        let nugget = crate::pipeline::nugget_from_article(event, &article);
        let nugget_id = nugget.nugget_id.clone();
        items.push(EvalItem {
            nugget,
            trigger_query: event.trigger_query.clone(),
            original_answer: event.original_answer.clone(),
            feedback_text: event.free_text.clone(),
        });

        if sources.contains(&QuerySource::InSample) {
            queries.push(TaggedQuery {
                text: event.trigger_query.clone(),
                source: QuerySource::InSample,
                nugget_id: nugget_id.clone(),
            });
        }
        if sources.contains(&QuerySource::Historical) {
            for q in mine_historical(inputs.query_log, &event.trigger_query, &index, search) {
                queries.push(TaggedQuery {
                    text: q,
                    source: QuerySource::Historical,
                    nugget_id: nugget_id.clone(),
                });
            }
        }
        if sources.contains(&QuerySource::Synthetic) {
            let synthetic = gen_synthetic_paraphrases(
                &event.trigger_query,
                &index,
                synthetic_per_event,
                mix(&[seed, fnv1a64(event.event_id.as_bytes())]),
                search,
                provider,
            )?;
            for q in synthetic {
                queries.push(TaggedQuery {
                    text: q,
                    source: QuerySource::Synthetic,
                    nugget_id: nugget_id.clone(),
                });
            }
        }
    }

    Ok(Experiment { index, items, queries, skipped_events: skipped })
}

/// Run the requested variants over a prepared experiment; returns the
/// aggregated report plus the raw per-run slices.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    experiment: &Experiment,
    variants: &[Variant],
    seeds: &[u64],
    search: &Search,
    agent_cfg: &AgentConfig,
    provider: &Provider,
    optimize_cfg: &OptimizeConfig,
) -> Result<(EvalReport, Vec<ReportSlice>), EvalError> {
    let mut slices = Vec::new();
    for &variant in variants {
        slices.extend(eval_variant(
            &experiment.items,
            variant,
            &experiment.queries,
            &experiment.index,
            search,
            agent_cfg,
            provider,
            optimize_cfg,
            seeds,
        )?);
    }
    let report = aggregate_report(&slices)?;
    Ok((report, slices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PassPolicy;

    fn mk_slice(variant: Variant, source: QuerySource, rates: &[(u32, u32, u32)]) -> ReportSlice {
        ReportSlice {
            variant,
            source,
            samples: rates
                .iter()
                .enumerate()
                .map(|(i, (total, retrieved, cited))| RunSample {
                    seed: i as u64,
                    total: *total,
                    retrieved: *retrieved,
                    cited: *cited,
                })
                .collect(),
            judge: JudgeHistogram::default(),
            config_fingerprint: "fp".to_string(),
        }
    }

    #[test]
    fn aggregate_mean_and_sample_std() {
        // 50%, 60%, 70% retrieval over three runs -> 60 ± 10
        let slice = mk_slice(
            Variant::A,
            QuerySource::InSample,
            &[(10, 5, 4), (10, 6, 5), (10, 7, 6)],
        );
        let report = aggregate_report(&[slice]).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert!((row.retrieval_mean - 60.0).abs() < 1e-9);
        assert!((row.retrieval_std.unwrap() - 10.0).abs() < 1e-9);
        assert!(row.citation_mean <= row.retrieval_mean);
    }

    #[test]
    fn single_run_reports_no_std() {
        let slice = mk_slice(Variant::B, QuerySource::Historical, &[(10, 5, 5)]);
        let report = aggregate_report(&[slice]).unwrap();
        assert!(report.rows[0].retrieval_std.is_none());
        assert!(report.rows[0].citation_std.is_none());
    }

    #[test]
    fn mixed_fingerprints_are_rejected() {
        let a = mk_slice(Variant::A, QuerySource::InSample, &[(1, 1, 1)]);
        let mut b = mk_slice(Variant::B, QuerySource::InSample, &[(1, 1, 1)]);
        b.config_fingerprint = "other".to_string();
        assert!(matches!(aggregate_report(&[a, b]), Err(EvalError::MixedFingerprints)));
    }

    #[test]
    fn rows_order_by_variant_then_source() {
        let slices = vec![
            mk_slice(Variant::E, QuerySource::Synthetic, &[(1, 0, 0)]),
            mk_slice(Variant::A, QuerySource::Synthetic, &[(1, 0, 0)]),
            mk_slice(Variant::A, QuerySource::InSample, &[(1, 0, 0)]),
            mk_slice(Variant::E, QuerySource::Historical, &[(1, 0, 0)]),
        ];
        let report = aggregate_report(&slices).unwrap();
        let order: Vec<(Variant, QuerySource)> =
            report.rows.iter().map(|r| (r.variant, r.source)).collect();
        assert_eq!(
            order,
            vec![
                (Variant::A, QuerySource::InSample),
                (Variant::A, QuerySource::Synthetic),
                (Variant::E, QuerySource::Historical),
                (Variant::E, QuerySource::Synthetic),
            ]
        );
    }

    #[test]
    fn csv_has_one_row_per_metric() {
        let slices = vec![
            mk_slice(Variant::A, QuerySource::InSample, &[(1, 0, 0)]),
            mk_slice(Variant::B, QuerySource::InSample, &[(1, 0, 0)]),
        ];
        let report = aggregate_report(&slices).unwrap();
        let csv = render_csv(&report);
        // header + 2 rows x 2 metrics
        assert_eq!(csv.lines().count(), 1 + 4);
    }

    #[test]
    fn empty_aggregation_is_an_error() {
        assert!(matches!(aggregate_report(&[]), Err(EvalError::Empty)));
    }

    fn mining_fixture() -> (Index, Search) {
        let mut idx = Index::new(256);
        idx.upsert(Document {
            doc_id: "kb-1".into(),
            title: "password reset guide".into(),
            body: "Reset passwords from the portal settings page.".into(),
            source: DocSource::Kb,
            anchors: None,
        })
        .unwrap();
        let search = Search::new(crate::Config::default());
        (idx, search)
    }

    #[test]
    fn mining_respects_both_thresholds_and_self_exclusion() {
        let (idx, search) = mining_fixture();
        let q0 = "why can't my analyst reset another teammate password from the admin panel";
        let log = vec![
            // near-duplicate: survives both thresholds
            QueryRecord {
                query: "why can't my analyst reset another teammate password from the panel"
                    .into(),
            },
            // unrelated: fails the cosine threshold
            QueryRecord { query: "how do i export invoices as csv".into() },
            // the trigger itself: excluded
            QueryRecord { query: q0.into() },
        ];
        let mined = mine_historical(&log, q0, &idx, &search);
        assert_eq!(mined.len(), 1);
        assert!(mined[0].contains("teammate"));
        // survivors verified above the re-rank threshold
        for m in &mined {
            assert!(search.reranker().score_pair(q0, m) > 0.85);
        }
    }

    #[test]
    fn synthetic_paraphrases_share_content_with_the_trigger() {
        let (idx, search) = mining_fixture();
        let provider = Provider::sim();
        let q0 = "why can't my analyst reset another teammate password from the admin panel?";
        for seed in 0..50 {
            let out =
                gen_synthetic_paraphrases(q0, &idx, 3, seed, &search, &provider).unwrap();
            assert_eq!(out.len(), 3);
            let q0_content = crate::text::content_token_set(q0);
            for p in &out {
                let pc = crate::text::content_token_set(p);
                assert!(
                    pc.intersection(&q0_content).count() >= 1,
                    "paraphrase {p:?} shares nothing with the trigger"
                );
            }
        }
    }

    #[test]
    fn synthetic_paraphrases_work_on_an_empty_corpus() {
        let idx = Index::new(256);
        let search = Search::new(crate::Config::default());
        let provider = Provider::sim();
        let out = gen_synthetic_paraphrases(
            "how do i rotate webhook secrets?",
            &idx,
            3,
            9,
            &search,
            &provider,
        )
        .unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn judge_consistency_na_iff_absent() {
        let provider = Provider::sim();
        let nugget = Nugget {
            nugget_id: "n-9".into(),
            title: "quota ceiling".into(),
            body: "The quota ceiling is fixed at nine uploads per day.".into(),
            source_event_id: "ev-9".into(),
            customer_id: "c".into(),
        };
        let nugget_doc = Document {
            doc_id: "nugget:n-9".into(),
            title: nugget.title.clone(),
            body: nugget.body.clone(),
            source: DocSource::Nugget,
            anchors: None,
        };
        let mut input = JudgeInput {
            original_question: "what is the quota?".into(),
            original_answer: "uploads are unlimited".into(),
            feedback_text: "quota is nine per day".into(),
            nugget,
            retrieved_context: vec![nugget_doc],
            answer: "The quota ceiling is fixed at nine uploads per day.".into(),
            nugget_doc_id: "nugget:n-9".into(),
            wrong_claim: None,
        };
        let present = judge_answer(&input, &provider).unwrap();
        assert_ne!(present.faithfulness, Faithfulness::NotApplicable);
        input.retrieved_context.clear();
        let absent = judge_answer(&input, &provider).unwrap();
        assert_eq!(absent.faithfulness, Faithfulness::NotApplicable);
        assert_eq!(absent.compliance, Compliance::Misses);
    }

    #[test]
    fn eval_variant_isolates_and_orders_rates() {
        // one item, one in-sample query, two seeds
        let mut idx = Index::new(128);
        idx.upsert(Document {
            doc_id: "kb-1".into(),
            title: "unrelated".into(),
            body: "Completely unrelated material about archives.".into(),
            source: DocSource::Kb,
            anchors: None,
        })
        .unwrap();
        let search = Search::new(crate::Config::default());
        let provider = Provider::sim();
        let agent_cfg = AgentConfig::default();
        let optimize_cfg =
            OptimizeConfig { pass_policy: PassPolicy::Any, ..OptimizeConfig::default() };
        let item = EvalItem {
            nugget: Nugget {
                nugget_id: "n-1".into(),
                title: "webhook rotation".into(),
                body: "Webhook secrets rotate every thirty days.".into(),
                source_event_id: "ev-1".into(),
                customer_id: "c".into(),
            },
            trigger_query: "how often do webhook secrets rotate?".into(),
            original_answer: "secrets never rotate".into(),
            feedback_text: "webhook secrets rotate every thirty days".into(),
        };
        let queries = vec![TaggedQuery {
            text: item.trigger_query.clone(),
            source: QuerySource::InSample,
            nugget_id: "n-1".into(),
        }];
        let hash = idx.state_hash();
        let slices = eval_variant(
            &[item],
            Variant::D,
            &queries,
            &idx,
            &search,
            &agent_cfg,
            &provider,
            &optimize_cfg,
            &[1, 2],
        )
        .unwrap();
        assert_eq!(idx.state_hash(), hash);
        assert_eq!(slices.len(), 1);
        let slice = &slices[0];
        assert_eq!(slice.samples.len(), 2);
        for s in &slice.samples {
            assert!(s.cited <= s.retrieved);
            assert_eq!(s.total, 1);
        }
        // a direct trigger query on a tiny corpus retrieves and cites
        assert!(slice.samples.iter().all(|s| s.retrieved == 1 && s.cited == 1));
    }
}
