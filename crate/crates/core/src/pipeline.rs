//! The nugget pipeline: actionability filtering, the A-D variant builders,
//! probe-set construction, and the retrieval-in-the-loop optimization that
//! produces variant E.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_agent, AgentConfig};
use crate::model::{
    anchors_avoid_trigger, nugget_doc_id, render_indexable, validate_indexable, IndexableNugget,
    Nugget, PassPolicy, ProbeSet, RevisionEntry, Variant,
};
use crate::model::{Document, FeedbackEvent};
use crate::provider::{
    Provider, ProviderError, ReflectionInput, ReflectionOutput, TaskOutput, TaskPayload, TextTask,
};
use crate::rng::{mix, ns};
use crate::text::{content_token_set, fnv1a64, sentences, token_jaccard, token_set};
use crate::{Index, Search};

/// Output of the single-pass actionability classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionabilityResult {
    pub feedback_usefulness: Usefulness,
    pub kb_candidate: bool,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub article: Option<Article>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usefulness {
    Useful,
    NotUseful,
}

/// Title and body extracted from an actionable correction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub title: String,
    pub body: String,
}

/// Outcome of one probe query against an inserted candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub query: String,
    pub retrieved: bool,
    pub cited: bool,
    /// Top gated non-nugget documents, by doc id.
    pub top_competitors: Vec<String>,
    pub answer: String,
}

/// One optimization iteration: the candidate as tested, what the probes
/// saw, and what the reflector changed afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub candidate: IndexableNugget,
    pub probes: Vec<ProbeOutcome>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<String>,
}

/// Full log of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationLog {
    pub nugget_id: String,
    pub iterations: Vec<IterationRecord>,
    pub iterations_used: u32,
    pub converged: bool,
    pub config_fingerprint: String,
}

/// Loop parameters: the iteration budget, the probe paraphrase count, and
/// the convergence rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub max_iterations: u32,
    pub probe_paraphrases: usize,
    pub pass_policy: PassPolicy,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { max_iterations: 3, probe_paraphrases: 4, pass_policy: PassPolicy::Any }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("index: {0}")]
    Stack(#[from] crate::stack::StackError),
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),
    #[error("variant E is produced by the optimization loop, not the builder")]
    VariantNeedsOptimization,
    #[error("probe construction failed: {0}")]
    ProbeConstruction(String),
    #[error("candidate already present in the base index: {0}")]
    CandidateAlreadyIndexed(String),
    #[error("unexpected provider output for task kind")]
    UnexpectedOutput,
}

/// Route a feedback event through the actionability classifier. Provider
/// schema errors surface to the caller so the event can be marked
/// unprocessed rather than silently dropped.
pub fn filter_actionable(
    event: &FeedbackEvent,
    provider: &Provider,
) -> Result<ActionabilityResult, ProviderError> {
    let task = TextTask {
        payload: TaskPayload::ClassifyFeedback { event: event.clone() },
        seed: fnv1a64(event.event_id.as_bytes()),
    };
    match provider.execute(&task)? {
        TaskOutput::Classification(result) => Ok(result),
        _ => Err(ProviderError::Schema {
            reason: "expected a classification output".to_string(),
            raw: String::new(),
        }),
    }
}

/// Deterministic nugget identity for an event's extracted article.
pub fn nugget_from_article(event: &FeedbackEvent, article: &Article) -> Nugget {
    Nugget {
        nugget_id: format!("n-{}", event.event_id),
        title: article.title.clone(),
        body: article.body.clone(),
        source_event_id: event.event_id.clone(),
        customer_id: event.customer_id.clone(),
    }
}

/// Build the indexable form for variants A-D. Variant E comes out of
/// [`optimize_nugget`].
pub fn build_variant(
    nugget: &Nugget,
    trigger_query: &str,
    variant: Variant,
    seed: u64,
    provider: &Provider,
) -> Result<IndexableNugget, PipelineError> {
    let anchors = match variant {
        Variant::A => Vec::new(),
        Variant::B => anchors_from_provider(nugget, Some(trigger_query), 1, seed, provider)?,
        Variant::C => anchors_from_provider(nugget, None, 5, seed, provider)?,
        Variant::D => anchors_from_provider(nugget, Some(trigger_query), 5, seed, provider)?,
        Variant::E => return Err(PipelineError::VariantNeedsOptimization),
    };
    let candidate = IndexableNugget {
        nugget: nugget.clone(),
        anchors,
        variant,
        iterations_used: 0,
        revision_log: Vec::new(),
    };
    ensure_candidate_valid(&candidate, trigger_query)?;
    Ok(candidate)
}

fn anchors_from_provider(
    nugget: &Nugget,
    trigger_query: Option<&str>,
    count: usize,
    seed: u64,
    provider: &Provider,
) -> Result<Vec<String>, PipelineError> {
    let task = TextTask {
        payload: TaskPayload::GenerateAnchors {
            nugget: nugget.clone(),
            trigger_query: trigger_query.map(str::to_string),
            count,
        },
        seed: mix(&[seed, ns::ANCHORS]),
    };
    match provider.execute(&task)? {
        TaskOutput::Anchors(anchors) => Ok(anchors),
        _ => Err(PipelineError::UnexpectedOutput),
    }
}

fn ensure_candidate_valid(
    candidate: &IndexableNugget,
    trigger_query: &str,
) -> Result<(), PipelineError> {
    let violations = validate_indexable(candidate);
    if !violations.is_empty() {
        return Err(PipelineError::InvalidCandidate(format!("{violations:?}")));
    }
    if !anchors_avoid_trigger(&candidate.anchors, trigger_query) {
        return Err(PipelineError::InvalidCandidate(
            "anchor equals the trigger query verbatim".to_string(),
        ));
    }
    Ok(())
}

/// Assemble the probe set: the trigger plus fresh paraphrases, each
/// disjoint from the candidate's anchors (token Jaccard below 0.8). A
/// colliding paraphrase is regenerated with a bumped seed up to ten times,
/// then dropped; fewer than four total probes is an error surfacing
/// lexicon inadequacy.
pub fn build_probe_set(
    trigger_query: &str,
    candidate: &IndexableNugget,
    seed: u64,
    provider: &Provider,
    pass_policy: PassPolicy,
    paraphrase_count: usize,
) -> Result<ProbeSet, PipelineError> {
    if !(3..=5).contains(&paraphrase_count) {
        return Err(PipelineError::ProbeConstruction(format!(
            "paraphrase count must be in 3..=5, got {paraphrase_count}"
        )));
    }
    let mut accepted: Vec<String> = Vec::new();
    for slot in 0..paraphrase_count {
        let mut found = false;
        for attempt in 0..10u64 {
            let task = TextTask {
                payload: TaskPayload::Paraphrase {
                    query: trigger_query.to_string(),
                    count: 1,
                    vocabulary: vec![],
                },
                seed: mix(&[seed, ns::PROBES, slot as u64, attempt]),
            };
            let Ok(TaskOutput::Paraphrases(mut ps)) = provider.execute(&task) else {
                continue;
            };
            let Some(p) = ps.pop() else { continue };
            if accepted.contains(&p) || p == trigger_query {
                continue;
            }
            let disjoint =
                candidate.anchors.iter().all(|a| token_jaccard(&p, a) < 0.8);
            if disjoint {
                accepted.push(p);
                found = true;
                break;
            }
        }
        let _ = found;
    }
    if 1 + accepted.len() < 4 {
        return Err(PipelineError::ProbeConstruction(format!(
            "only {} probes available after disjointness filtering",
            1 + accepted.len()
        )));
    }
    Ok(ProbeSet {
        trigger: trigger_query.to_string(),
        paraphrases: accepted,
        pass_policy,
    })
}

/// Everything [`optimize_nugget`] needs besides the nugget itself.
pub struct OptimizeContext<'a> {
    pub index: &'a Index,
    pub search: &'a Search,
    pub agent: &'a AgentConfig,
    pub provider: &'a Provider,
    pub config: &'a OptimizeConfig,
}

/// Retrieval-in-the-loop optimization. Expands the nugget as a variant-D
/// candidate, then for up to `max_iterations`: scoped-insert, probe, and on
/// failure reflect and revise. The candidate is tagged variant E; on a
/// first-iteration pass its content is exactly the variant-D expansion.
/// The base index is never mutated.
pub fn optimize_nugget(
    ctx: &OptimizeContext<'_>,
    nugget: &Nugget,
    trigger_query: &str,
    seed: u64,
    feedback_text: Option<&str>,
) -> Result<(IndexableNugget, OptimizationLog), PipelineError> {
    let doc_id = nugget_doc_id(&nugget.nugget_id);
    if ctx.index.contains(&doc_id) {
        return Err(PipelineError::CandidateAlreadyIndexed(doc_id));
    }

    let mut candidate = build_variant(nugget, trigger_query, Variant::D, seed, ctx.provider)?;
    candidate.variant = Variant::E;

    let fingerprint =
        crate::agent::config_fingerprint(ctx.search, ctx.index, ctx.agent, ctx.provider);
    let mut log = OptimizationLog {
        nugget_id: nugget.nugget_id.clone(),
        iterations: Vec::new(),
        iterations_used: 0,
        converged: false,
        config_fingerprint: fingerprint,
    };

    let max_t = ctx.config.max_iterations.min(3).max(1);
    for t in 1..=max_t {
        let rendered = render_indexable(&candidate)
            .map_err(|e| PipelineError::InvalidCandidate(e.to_string()))?;
        let probes = build_probe_set(
            trigger_query,
            &candidate,
            mix(&[seed, ns::PROBES, t as u64]),
            ctx.provider,
            ctx.config.pass_policy,
            ctx.config.probe_paraphrases,
        )?;

        let session = ctx.index.scoped_insert(std::slice::from_ref(&rendered))?;
        let mut outcomes: Vec<ProbeOutcome> = Vec::new();
        for probe in probes.queries() {
            let trace = run_agent(
                session.index(),
                probe,
                ctx.search,
                ctx.agent,
                ctx.provider,
                mix(&[seed, t as u64, fnv1a64(probe.as_bytes())]),
                Some(&doc_id),
            );
            let top_competitors: Vec<String> = trace
                .final_gated
                .iter()
                .filter(|s| s.doc_id != doc_id)
                .take(3)
                .map(|s| s.doc_id.clone())
                .collect();
            outcomes.push(ProbeOutcome {
                query: probe.to_string(),
                retrieved: trace.nugget_retrieved,
                cited: trace.nugget_cited,
                top_competitors,
                answer: trace.answer,
            });
        }
        drop(session);

        let passed = match probes.pass_policy {
            PassPolicy::Any => outcomes.iter().any(|o| o.retrieved),
            PassPolicy::All => outcomes.iter().all(|o| o.retrieved),
        };

        let mut record = IterationRecord {
            iteration: t,
            candidate: candidate.clone(),
            probes: outcomes.clone(),
            passed,
            reflection: None,
        };

        if passed {
            log.iterations.push(record);
            log.iterations_used = t;
            log.converged = true;
            candidate.iterations_used = t;
            return Ok((candidate, log));
        }

        if t < max_t {
            let summary = apply_reflection(
                ctx,
                &mut candidate,
                trigger_query,
                &outcomes,
                feedback_text,
                t,
            )?;
            record.reflection = Some(summary);
        }
        log.iterations.push(record);
    }

    candidate.iterations_used = max_t;
    log.iterations_used = max_t;
    log.converged = false;
    Ok((candidate, log))
}

/// Run the reflector on the failed probes and apply its revision if it
/// honors the token-source and shape constraints; otherwise keep the
/// candidate and log the violation.
fn apply_reflection(
    ctx: &OptimizeContext<'_>,
    candidate: &mut IndexableNugget,
    trigger_query: &str,
    outcomes: &[ProbeOutcome],
    feedback_text: Option<&str>,
    iteration: u32,
) -> Result<String, PipelineError> {
    let failed: Vec<ProbeOutcome> =
        outcomes.iter().filter(|o| !o.retrieved).cloned().collect();
    let competitors: Vec<Document> = {
        let mut seen = BTreeSet::new();
        let mut docs = Vec::new();
        for o in &failed {
            for id in &o.top_competitors {
                if seen.insert(id.clone()) {
                    if let Some(d) = ctx.index.get(id) {
                        docs.push(d.clone());
                    }
                }
            }
        }
        docs
    };

    let input = ReflectionInput {
        nugget: candidate.nugget.clone(),
        anchors: candidate.anchors.clone(),
        trigger_query: trigger_query.to_string(),
        probes: failed,
        competitors: competitors.clone(),
        feedback_text: feedback_text.map(str::to_string),
    };
    let task = TextTask {
        payload: TaskPayload::Reflect { input: input.clone() },
        seed: mix(&[fnv1a64(candidate.nugget.nugget_id.as_bytes()), iteration as u64]),
    };
    let output = match ctx.provider.execute(&task)? {
        TaskOutput::Reflection(r) => r,
        _ => return Err(PipelineError::UnexpectedOutput),
    };

    match check_reflection(candidate, trigger_query, &input, &output) {
        Ok(()) => {
            let summary = output.summary.clone();
            candidate.nugget.title = output.title;
            candidate.nugget.body = output.body;
            candidate.anchors = output.anchors;
            candidate
                .revision_log
                .push(RevisionEntry { iteration, summary: summary.clone() });
            Ok(summary)
        }
        Err(reason) => {
            let summary = format!("revision rejected: {reason}");
            candidate
                .revision_log
                .push(RevisionEntry { iteration, summary: summary.clone() });
            Ok(summary)
        }
    }
}

/// Reflection acceptance rules: the revised form must keep every original
/// body sentence, add only content tokens that occur in the supplied
/// context, stay within the variant-E anchor bounds, and avoid the trigger
/// verbatim.
fn check_reflection(
    candidate: &IndexableNugget,
    trigger_query: &str,
    input: &ReflectionInput,
    output: &ReflectionOutput,
) -> Result<(), String> {
    for s in sentences(&candidate.nugget.body) {
        if !output.body.contains(&s) {
            return Err(format!("original body sentence dropped: {s}"));
        }
    }

    let mut revised = candidate.clone();
    revised.nugget.title = output.title.clone();
    revised.nugget.body = output.body.clone();
    revised.anchors = output.anchors.clone();
    let violations = validate_indexable(&revised);
    if !violations.is_empty() {
        return Err(format!("{violations:?}"));
    }
    if !anchors_avoid_trigger(&output.anchors, trigger_query) {
        return Err("anchor equals the trigger query verbatim".to_string());
    }

    let mut context = String::new();
    context.push_str(&input.nugget.title);
    context.push(' ');
    context.push_str(&input.nugget.body);
    context.push(' ');
    context.push_str(&input.anchors.join(" "));
    context.push(' ');
    context.push_str(&input.trigger_query);
    for p in &input.probes {
        context.push(' ');
        context.push_str(&p.query);
        context.push(' ');
        context.push_str(&p.answer);
    }
    for c in &input.competitors {
        context.push(' ');
        context.push_str(&c.indexed_text());
    }
    if let Some(f) = &input.feedback_text {
        context.push(' ');
        context.push_str(f);
    }
    let context_tokens = token_set(&context);

    let before = {
        let all = format!(
            "{} {} {}",
            candidate.nugget.title,
            candidate.nugget.body,
            candidate.anchors.join(" ")
        );
        content_token_set(&all)
    };
    let after = {
        let all = format!("{} {} {}", output.title, output.body, output.anchors.join(" "));
        content_token_set(&all)
    };
    for added in after.difference(&before) {
        if !context_tokens.contains(added) {
            return Err(format!("content token '{added}' not present in the supplied context"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentKind, DocSource, Signal};
    use crate::Config;

    fn event() -> FeedbackEvent {
        FeedbackEvent {
            event_id: "ev-f".into(),
            agent_kind: AgentKind::Chat,
            conversation: vec![],
            trigger_query:
                "Why can't my analyst reset another teammate's password from the admin panel?"
                    .into(),
            original_answer: "Any user with admin panel access can reset passwords.".into(),
            signal: Signal::ThumbsDown,
            free_text: "In portal v8.2 password reset is restricted to the workspace owner \
                        role. The analyst role can view team members but cannot reset."
                .into(),
            cited_doc_ids: vec![],
            customer_id: "acme".into(),
        }
    }

    fn nugget() -> Nugget {
        let provider = Provider::sim();
        let result = filter_actionable(&event(), &provider).unwrap();
        nugget_from_article(&event(), &result.article.unwrap())
    }

    fn kb_doc(id: &str, title: &str, body: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: title.into(),
            body: body.into(),
            source: DocSource::Kb,
            anchors: None,
        }
    }

    fn base_index() -> Index {
        let mut idx = Index::new(128);
        idx.upsert_all([
            kb_doc(
                "kb-self",
                "resetting your own password",
                "Go to the login screen and choose forgot password to reset your own \
                 password. Password reset emails arrive within a minute.",
            ),
            kb_doc(
                "kb-roles",
                "portal roles overview",
                "The portal has owner, admin, and analyst roles. Each role carries \
                 different permissions.",
            ),
            kb_doc(
                "kb-billing",
                "billing exports",
                "Invoices export from the billing page as csv files.",
            ),
            kb_doc(
                "kb-archive",
                "archive retention",
                "Archived projects purge after two years of inactivity.",
            ),
        ])
        .unwrap();
        idx
    }

    #[test]
    fn filter_actionable_on_the_correction_fixture() {
        let provider = Provider::sim();
        let r = filter_actionable(&event(), &provider).unwrap();
        assert!(r.kb_candidate);
        assert!(r.article.is_some());
    }

    #[test]
    fn variant_anchor_counts_follow_the_mapping() {
        let provider = Provider::sim();
        let n = nugget();
        let q0 = &event().trigger_query;
        assert!(build_variant(&n, q0, Variant::A, 1, &provider).unwrap().anchors.is_empty());
        assert_eq!(build_variant(&n, q0, Variant::B, 1, &provider).unwrap().anchors.len(), 1);
        assert_eq!(build_variant(&n, q0, Variant::C, 1, &provider).unwrap().anchors.len(), 5);
        let d = build_variant(&n, q0, Variant::D, 1, &provider).unwrap();
        assert_eq!(d.anchors.len(), 5);
        // the first D anchor paraphrases the trigger, never verbatim
        assert_ne!(d.anchors[0].to_lowercase(), q0.to_lowercase());
        assert!(matches!(
            build_variant(&n, q0, Variant::E, 1, &provider),
            Err(PipelineError::VariantNeedsOptimization)
        ));
    }

    #[test]
    fn variant_b_anchor_is_not_verbatim_trigger() {
        let provider = Provider::sim();
        let n = nugget();
        let q0 = &event().trigger_query;
        let b = build_variant(&n, q0, Variant::B, 42, &provider).unwrap();
        assert_eq!(b.anchors.len(), 1);
        assert!(anchors_avoid_trigger(&b.anchors, q0));
    }

    #[test]
    fn builds_are_deterministic_under_a_fixed_seed() {
        let provider = Provider::sim();
        let n = nugget();
        let q0 = &event().trigger_query;
        let one = build_variant(&n, q0, Variant::D, 9, &provider).unwrap();
        let two = build_variant(&n, q0, Variant::D, 9, &provider).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn probe_set_has_default_shape_and_disjoint_paraphrases() {
        let provider = Provider::sim();
        let n = nugget();
        let q0 = &event().trigger_query;
        let candidate = build_variant(&n, q0, Variant::D, 5, &provider).unwrap();
        let probes =
            build_probe_set(q0, &candidate, 77, &provider, PassPolicy::Any, 4).unwrap();
        assert_eq!(probes.query_count(), 5);
        assert_eq!(probes.trigger, *q0);
        for p in &probes.paraphrases {
            assert_ne!(p, q0);
            for a in &candidate.anchors {
                assert!(token_jaccard(p, a) < 0.8, "probe {p:?} collides with anchor {a:?}");
            }
        }
    }

    #[test]
    fn probe_disjointness_holds_across_seeds() {
        let provider = Provider::sim();
        let n = nugget();
        let q0 = &event().trigger_query;
        let candidate = build_variant(&n, q0, Variant::D, 5, &provider).unwrap();
        for seed in 0..50 {
            let probes =
                build_probe_set(q0, &candidate, seed, &provider, PassPolicy::Any, 4).unwrap();
            for p in &probes.paraphrases {
                for a in &candidate.anchors {
                    assert!(token_jaccard(p, a) < 0.8);
                }
            }
        }
    }

    #[test]
    fn optimization_restores_the_base_index_and_terminates() {
        let idx = base_index();
        let hash = idx.state_hash();
        let search = Search::new(Config::default());
        let provider = Provider::sim();
        let agent = AgentConfig::default();
        let config = OptimizeConfig::default();
        let ctx = OptimizeContext {
            index: &idx,
            search: &search,
            agent: &agent,
            provider: &provider,
            config: &config,
        };
        let n = nugget();
        let q0 = &event().trigger_query;
        let (candidate, log) = optimize_nugget(&ctx, &n, q0, 123, None).unwrap();
        assert_eq!(idx.state_hash(), hash);
        assert!(log.iterations_used <= 3);
        assert_eq!(candidate.variant, Variant::E);
        assert!(candidate.iterations_used <= 3);
        assert!(!candidate.anchors.is_empty() && candidate.anchors.len() <= 8);
        // every original body sentence survived every revision
        for s in sentences(&n.body) {
            assert!(candidate.nugget.body.contains(&s));
        }
    }

    #[test]
    fn first_iteration_pass_returns_the_variant_d_expansion() {
        // tiny corpus: the candidate dominates retrieval for every probe
        let mut idx = Index::new(128);
        idx.upsert(kb_doc("kb-1", "unrelated archive note", "Archives purge yearly.")).unwrap();
        let search = Search::new(Config::default());
        let provider = Provider::sim();
        let agent = AgentConfig::default();
        let config = OptimizeConfig { pass_policy: PassPolicy::All, ..OptimizeConfig::default() };
        let ctx = OptimizeContext {
            index: &idx,
            search: &search,
            agent: &agent,
            provider: &provider,
            config: &config,
        };
        let n = nugget();
        let q0 = &event().trigger_query;
        let (candidate, log) = optimize_nugget(&ctx, &n, q0, 7, None).unwrap();
        assert!(log.converged);
        assert_eq!(log.iterations_used, 1);
        let d = build_variant(&n, q0, Variant::D, 7, &provider).unwrap();
        assert_eq!(candidate.nugget.title, d.nugget.title);
        assert_eq!(candidate.nugget.body, d.nugget.body);
        assert_eq!(candidate.anchors, d.anchors);
        assert!(candidate.revision_log.is_empty());
    }

    #[test]
    fn hopeless_gate_exhausts_the_budget_without_converging() {
        let idx = base_index();
        let mut cfg = Config::default();
        // maximum calibrated value is sigma(2) < 0.999: nothing ever gates
        cfg.gate_threshold = 0.999;
        let search = Search::new(cfg);
        let provider = Provider::sim();
        let agent = AgentConfig::default();
        let config = OptimizeConfig::default();
        let ctx = OptimizeContext {
            index: &idx,
            search: &search,
            agent: &agent,
            provider: &provider,
            config: &config,
        };
        let n = nugget();
        let q0 = &event().trigger_query;
        let (candidate, log) = optimize_nugget(&ctx, &n, q0, 5, None).unwrap();
        assert!(!log.converged);
        assert_eq!(log.iterations_used, 3);
        assert_eq!(candidate.iterations_used, 3);
        assert_eq!(log.iterations.len(), 3);
    }

    #[test]
    fn ticket_transcripts_flow_through_as_trigger_queries() {
        // the ticket agent supplies the full transcript as the trigger; the
        // pipeline treats it like any other query source
        let transcript = "customer: the export keeps failing for our auditor.\n\
                          agent: which portal version?\n\
                          customer: portal v9, the invoice export from the admin panel.";
        let ev = FeedbackEvent {
            event_id: "ev-ticket".into(),
            agent_kind: crate::model::AgentKind::Ticket,
            conversation: vec![],
            trigger_query: transcript.into(),
            original_answer: "any role can export invoices".into(),
            signal: Signal::ThumbsDown,
            free_text: "in portal v9 the invoice export is restricted to the owner role. the \
                        auditor role can view invoices but cannot export."
                .into(),
            cited_doc_ids: vec![],
            customer_id: "acme".into(),
        };
        let provider = Provider::sim();
        let r = filter_actionable(&ev, &provider).unwrap();
        assert!(r.kb_candidate);
        let n = nugget_from_article(&ev, &r.article.unwrap());
        let d = build_variant(&n, &ev.trigger_query, Variant::D, 3, &provider).unwrap();
        assert_eq!(d.anchors.len(), 5);
        assert!(anchors_avoid_trigger(&d.anchors, &ev.trigger_query));

        let idx = base_index();
        let search = Search::new(Config::default());
        let agent = AgentConfig::default();
        let config = OptimizeConfig::default();
        let ctx = OptimizeContext {
            index: &idx,
            search: &search,
            agent: &agent,
            provider: &provider,
            config: &config,
        };
        let (candidate, log) =
            optimize_nugget(&ctx, &n, &ev.trigger_query, 9, Some(&ev.free_text)).unwrap();
        assert!(log.iterations_used <= 3);
        assert_eq!(candidate.variant, Variant::E);
    }

    #[test]
    fn candidate_already_indexed_is_rejected() {
        let mut idx = base_index();
        let n = nugget();
        let candidate = IndexableNugget {
            nugget: n.clone(),
            anchors: vec![],
            variant: Variant::A,
            iterations_used: 0,
            revision_log: vec![],
        };
        idx.upsert(render_indexable(&candidate).unwrap()).unwrap();
        let search = Search::new(Config::default());
        let provider = Provider::sim();
        let agent = AgentConfig::default();
        let config = OptimizeConfig::default();
        let ctx = OptimizeContext {
            index: &idx,
            search: &search,
            agent: &agent,
            provider: &provider,
            config: &config,
        };
        assert!(matches!(
            optimize_nugget(&ctx, &n, "q", 1, None),
            Err(PipelineError::CandidateAlreadyIndexed(_))
        ));
    }

    #[test]
    fn reflection_gains_cover_failed_probes_in_the_simulator() {
        // run against a competitive corpus and inspect any reflection that fired
        let idx = base_index();
        let search = Search::new(Config::default());
        let provider = Provider::sim();
        let agent = AgentConfig::default();
        let config = OptimizeConfig { pass_policy: PassPolicy::All, ..OptimizeConfig::default() };
        let ctx = OptimizeContext {
            index: &idx,
            search: &search,
            agent: &agent,
            provider: &provider,
            config: &config,
        };
        let n = nugget();
        let q0 = &event().trigger_query;
        let (_, log) = optimize_nugget(&ctx, &n, q0, 17, None).unwrap();
        for w in log.iterations.windows(2) {
            let (before, after) = (&w[0], &w[1]);
            if before.passed {
                continue;
            }
            // after a reflection triggered by failed probe p, some anchor of the
            // next candidate shares at least half of p's content tokens
            for o in before.probes.iter().filter(|o| !o.retrieved) {
                let probe_content = content_token_set(&o.query);
                if probe_content.is_empty() {
                    continue;
                }
                let covered = after.candidate.anchors.iter().any(|a| {
                    let at = token_set(a);
                    probe_content.iter().filter(|t| at.contains(*t)).count() * 2
                        >= probe_content.len()
                });
                assert!(covered, "probe {:?} uncovered after reflection", o.query);
            }
        }
    }
}
