//! Deterministic rule backends for every task kind. Pure in (payload,
//! seed): identical tasks produce identical output across processes and
//! platforms, which makes the whole pipeline testable offline.

use std::collections::BTreeSet;

use crate::eval::{
    Compliance, Faithfulness, Groundedness, JudgeInput, JudgeLabels, Regression,
};
use crate::model::{Document, FeedbackEvent, Nugget};
use crate::pipeline::{ActionabilityResult, Article, ProbeOutcome, Usefulness};
use crate::provider::lexicon::{bundled, Lexicon};
use crate::provider::{
    GeneratedAnswer, ProviderError, ReflectionInput, ReflectionOutput, TaskOutput, TaskPayload,
    TextTask,
};
use crate::rng::{mix, SplitMix64};
use crate::text::{
    content_token_set, content_tokens, is_stopword, sentences, token_set, tokenize,
};

/// Fixed answer when no document passes the gate.
pub const REFUSAL: &str =
    "I could not find enough information in the knowledge base to answer this.";

pub fn execute(task: &TextTask) -> Result<TaskOutput, ProviderError> {
    Ok(match &task.payload {
        TaskPayload::ClassifyFeedback { event } => TaskOutput::Classification(classify(event)),
        TaskPayload::ExtractNugget { event } => TaskOutput::Extraction(extract_article(event)),
        TaskPayload::GenerateAnchors { nugget, trigger_query, count } => TaskOutput::Anchors(
            generate_anchors(nugget, trigger_query.as_deref(), *count, task.seed),
        ),
        TaskPayload::Paraphrase { query, count, vocabulary } => {
            TaskOutput::Paraphrases(paraphrase(query, *count, vocabulary, task.seed))
        }
        TaskPayload::Reflect { input } => TaskOutput::Reflection(reflect(input)),
        TaskPayload::GenerateAnswer { query, gated_docs } => {
            TaskOutput::Answer(generate_answer(query, gated_docs))
        }
        TaskPayload::Judge { input } => TaskOutput::Judgement(judge(input)),
    })
}

// ---------------------------------------------------------------------------
// paraphrase

const PIVOTS: &[&str] =
    &["from", "in", "on", "at", "for", "with", "inside", "under", "about", "when"];

/// Paraphrases of a query: synonym substitution via the bundled lexicon
/// (keeping one original content token), clause reordering around a
/// prepositional pivot, and an optional non-content-token drop. Output is
/// lowercase and never equals the input verbatim; distinct seeds give
/// pairwise-distinct strings where the lexicon permits.
pub fn paraphrase(query: &str, count: usize, vocabulary: &[String], seed: u64) -> Vec<String> {
    let lexicon = bundled();
    let mut out: Vec<String> = Vec::with_capacity(count);
    let mut salt = 0u64;
    while out.len() < count && salt < (count as u64) * 25 {
        let mut rng = SplitMix64::new(mix(&[seed, salt]));
        let candidate = paraphrase_once(query, lexicon, vocabulary, &mut rng);
        if candidate != query && !out.contains(&candidate) {
            out.push(candidate);
        }
        salt += 1;
    }
    out
}

fn paraphrase_once(
    query: &str,
    lexicon: &Lexicon,
    vocabulary: &[String],
    rng: &mut SplitMix64,
) -> String {
    let trimmed = query.trim();
    let terminal = trimmed.chars().last().filter(|c| matches!(c, '?' | '.' | '!'));
    let stripped = match terminal {
        Some(_) => &trimmed[..trimmed.len() - 1],
        None => trimmed,
    };
    let mut words: Vec<String> = stripped.split_whitespace().map(str::to_lowercase).collect();
    let originals = words.clone();
    let core = |w: &str| -> String { w.chars().filter(|c| c.is_alphanumeric()).collect() };

    // 1. substitute every lexicon hit, the synonym chosen by the seed;
    // one original content token is always reverted back so the
    // paraphrase keeps sharing vocabulary with its source
    let hit_indices: Vec<usize> =
        (0..words.len()).filter(|&i| lexicon.contains(&core(&words[i]))).collect();
    let mut substituted: Vec<usize> = Vec::new();
    for &i in &hit_indices {
        let synonyms = lexicon.synonyms(&core(&words[i])).expect("hit has synonyms");
        words[i] = rng.pick(synonyms).clone();
        substituted.push(i);
    }
    let original_content = content_token_set(stripped);
    let shares_content =
        |ws: &[String]| ws.iter().any(|w| original_content.contains(&core(w)));
    if !shares_content(&words) && !substituted.is_empty() {
        let revert = substituted[rng.below(substituted.len())];
        words[revert] = originals[revert].clone();
    }

    // 2. reorder around a prepositional pivot when one exists
    let pivots: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(i, w)| *i >= 2 && *i + 2 <= words.len() && PIVOTS.contains(&w.as_str()))
        .map(|(i, _)| i)
        .collect();
    if let Some(&pivot) = pivots.get(rng.below(pivots.len().max(1))).or(pivots.first()) {
        let tail: Vec<String> = words.split_off(pivot);
        let mut reordered = tail;
        reordered.extend(words);
        words = reordered;
    }

    // 3. optionally drop one non-content token
    let stops: Vec<usize> =
        words.iter().enumerate().filter(|(_, w)| is_stopword(w)).map(|(i, _)| i).collect();
    if !stops.is_empty() && rng.chance(1, 2) {
        words.remove(stops[rng.below(stops.len())]);
    }

    if !vocabulary.is_empty() {
        words.push(rng.pick(vocabulary).to_lowercase());
    }

    let mut text = words.join(" ");
    if let Some(t) = terminal {
        text.push(t);
    }

    if text == query {
        // force a difference: drop the first stopword, else reshuffle
        if let Some(pos) = words.iter().position(|w| is_stopword(w)) {
            words.remove(pos);
            text = words.join(" ");
            if let Some(t) = terminal {
                text.push(t);
            }
        } else if words.len() >= 2 {
            words.swap(0, 1);
            text = words.join(" ");
            if let Some(t) = terminal {
                text.push(t);
            }
        } else {
            text = format!("about {text}");
        }
    }
    text
}

// ---------------------------------------------------------------------------
// anchors

// question-shaped templates whose glue is function words only; the three
// slots carry nugget key tokens or their synonyms
const ANCHOR_TEMPLATES: &[(&str, &str, &str, &str)] = &[
    ("why can't my", "another", "in the", ""),
    ("why is the", "off for my", "in", ""),
    ("how can my", "another", "for them in", ""),
    ("what can a", "do to the", "from the", ""),
    ("how do i", "the", "", ""),
    ("which", "can", "the", ""),
    ("when does my", "", "", ""),
    ("where is my", "", "", ""),
];

/// Short future-user queries over the nugget's key tokens, with diverse
/// question surfaces and seed-driven synonym drift. When the trigger query
/// is supplied the first anchor is a non-verbatim paraphrase of it. No
/// anchor equals the trigger verbatim or copies a span of the nugget body.
pub fn generate_anchors(
    nugget: &Nugget,
    trigger_query: Option<&str>,
    count: usize,
    seed: u64,
) -> Vec<String> {
    let lexicon = bundled();
    let mut keys: Vec<String> = Vec::new();
    for t in content_tokens(&nugget.title).into_iter().chain(content_tokens(&nugget.body)) {
        if !keys.contains(&t) {
            keys.push(t);
        }
    }
    if keys.is_empty() {
        keys.push("details".to_string());
    }
    // title tokens lead the key list; lexicon-covered ones make the best
    // anchor material because future users drift exactly there
    let head: Vec<String> = {
        let covered: Vec<String> =
            keys.iter().filter(|k| lexicon.contains(k)).take(4).cloned().collect();
        if covered.len() >= 2 {
            covered
        } else {
            keys[..keys.len().min(4)].to_vec()
        }
    };

    let body_lower = nugget.body.to_lowercase();
    let trigger_lower = trigger_query.map(|q| q.trim().to_lowercase());
    let mut anchors: Vec<String> = Vec::with_capacity(count);

    if let Some(q0) = trigger_query {
        let first = paraphrase(q0, 1, &[], mix(&[seed, 0x51]));
        if let Some(p) = first.into_iter().next() {
            anchors.push(p);
        }
    }

    let mut rng = SplitMix64::new(mix(&[seed, 0xA2]));
    let mut template_cursor = rng.below(ANCHOR_TEMPLATES.len());
    let mut guard = 0;
    while anchors.len() < count && guard < count * 40 {
        guard += 1;
        let (g0, g1, g2, g3) = ANCHOR_TEMPLATES[template_cursor % ANCHOR_TEMPLATES.len()];
        template_cursor += 1;
        // three distinct keys per anchor, drifted like future queries
        let mut slots: Vec<String> = Vec::with_capacity(3);
        let mut pool: Vec<&String> = head.iter().chain(keys.iter()).collect();
        pool.dedup();
        for _ in 0..3 {
            if pool.is_empty() {
                break;
            }
            let idx = rng.below(pool.len().min(if slots.len() < 2 { head.len().max(1) } else { pool.len() }));
            slots.push(pool.remove(idx).clone());
        }
        while slots.len() < 3 {
            slots.push(slots.last().cloned().unwrap_or_else(|| "details".to_string()));
        }
        let a = drift_keyword(&slots[0], lexicon, &mut rng);
        let b = drift_keyword(&slots[1], lexicon, &mut rng);
        let c = drift_keyword(&slots[2], lexicon, &mut rng);
        // future users often name alternatives; sometimes extend one slot
        // with a second drift of the same key
        let alternative = if rng.chance(1, 2) {
            let alt = drift_keyword(&slots[0], lexicon, &mut rng);
            if alt != a {
                Some(alt)
            } else {
                None
            }
        } else {
            None
        };
        let mut parts: Vec<&str> = vec![g0, &a];
        if let Some(alt) = &alternative {
            parts.push("or");
            parts.push(alt);
        }
        if !g1.is_empty() {
            parts.push(g1);
        }
        parts.push(&b);
        if !g2.is_empty() {
            parts.push(g2);
        }
        parts.push(&c);
        if !g3.is_empty() {
            parts.push(g3);
        }
        let anchor = format!("{}?", parts.join(" ").trim());
        let lower = anchor.to_lowercase();
        let verbatim_trigger = trigger_lower.as_deref() == Some(lower.trim_end_matches('?'))
            || trigger_lower.as_deref() == Some(lower.as_str());
        if verbatim_trigger || body_lower.contains(lower.trim_end_matches('?')) {
            continue;
        }
        if anchors.contains(&anchor) {
            continue;
        }
        anchors.push(anchor);
    }
    anchors.truncate(count);
    anchors
}

fn drift_keyword(key: &str, lexicon: &Lexicon, rng: &mut SplitMix64) -> String {
    if let Some(synonyms) = lexicon.synonyms(key) {
        if rng.chance(5, 6) {
            return rng.pick(synonyms).clone();
        }
    }
    key.to_string()
}

// ---------------------------------------------------------------------------
// reflection

/// Deterministic revision heuristic for a candidate that failed probes:
/// pull missing probe terminology into the title, give every failed probe
/// a covering anchor, and append at most one scope-clarifying sentence
/// whose content tokens all come from the supplied context. Original body
/// sentences are never deleted or negated.
pub fn reflect(input: &ReflectionInput) -> ReflectionOutput {
    let failed: Vec<&ProbeOutcome> = input.probes.iter().filter(|p| !p.retrieved).collect();
    if failed.is_empty() {
        return ReflectionOutput {
            title: input.nugget.title.clone(),
            body: input.nugget.body.clone(),
            anchors: input.anchors.clone(),
            summary: "all probes passed; no revision".to_string(),
        };
    }

    let nugget_text =
        format!("{} {} {}", input.nugget.title, input.nugget.body, input.anchors.join(" "));
    let known = token_set(&nugget_text);

    // title: up to 2 content tokens from failed probes that the candidate
    // does not mention anywhere
    let mut missing: Vec<String> = Vec::new();
    for probe in &failed {
        for t in content_tokens(&probe.query) {
            if !known.contains(&t) && !missing.contains(&t) {
                missing.push(t);
            }
        }
    }
    missing.truncate(2);
    let title = if missing.is_empty() {
        input.nugget.title.clone()
    } else {
        format!("{} ({})", input.nugget.title, missing.join(" "))
    };

    // anchors: ensure each failed probe has an anchor sharing at least half
    // of its content tokens
    let trigger_lower = input.trigger_query.trim().to_lowercase();
    let mut anchors = input.anchors.clone();
    let mut added_anchors = 0usize;
    for probe in &failed {
        let probe_content = content_token_set(&probe.query);
        if probe_content.is_empty() {
            continue;
        }
        let covered = anchors.iter().any(|a| {
            let at = token_set(a);
            let hit = probe_content.iter().filter(|t| at.contains(*t)).count();
            hit * 2 >= probe_content.len()
        });
        if covered {
            continue;
        }
        let joined = probe_content.iter().cloned().collect::<Vec<_>>().join(" ");
        let probe_text = probe.query.trim().to_string();
        let candidate = if probe_text.to_lowercase() != trigger_lower {
            probe_text
        } else {
            ["", "how to ", "about "]
                .iter()
                .map(|prefix| format!("{prefix}{joined}"))
                .find(|c| c.trim().to_lowercase() != trigger_lower)
                .unwrap_or_else(|| format!("how to {joined}"))
        };
        if anchors.contains(&candidate) {
            continue;
        }
        if anchors.len() >= 8 {
            anchors.pop();
        }
        anchors.push(candidate);
        added_anchors += 1;
    }

    // body: append one scope-clarifying sentence contrasting with the top
    // competitor, built only from tokens present in the supplied context
    let mut body = input.nugget.body.clone();
    let mut scope_added = false;
    if let Some(top) = input.competitors.first() {
        if sentences(&body).len() < 3 {
            let nugget_known = token_set(&format!("{} {}", input.nugget.title, input.nugget.body));
            let mut distinguishing: Vec<String> = Vec::new();
            for t in content_tokens(&format!("{} {}", top.title, top.body)) {
                if !nugget_known.contains(&t) && !distinguishing.contains(&t) {
                    distinguishing.push(t);
                }
            }
            let ranked = rank_by_micro_idf(distinguishing, input);
            let picked: Vec<String> = ranked.into_iter().take(3).collect();
            if !picked.is_empty() {
                body = format!("{} This is not about {}.", body.trim_end(), picked.join(" "));
                scope_added = true;
            }
        }
    }

    let summary = format!(
        "title+{} anchors+{} scope_sentence={}",
        missing.len(),
        added_anchors,
        scope_added
    );
    ReflectionOutput { title, body, anchors, summary }
}

/// Rank tokens by idf over the micro-corpus of the reflection context
/// (each competitor, the nugget, and each probe counts as one document).
fn rank_by_micro_idf(tokens: Vec<String>, input: &ReflectionInput) -> Vec<String> {
    let mut sets: Vec<BTreeSet<String>> = Vec::new();
    sets.push(token_set(&format!("{} {}", input.nugget.title, input.nugget.body)));
    for c in &input.competitors {
        sets.push(token_set(&format!("{} {}", c.title, c.body)));
    }
    for p in &input.probes {
        sets.push(token_set(&p.query));
    }
    let n = sets.len() as f64;
    let mut scored: Vec<(String, f64)> = tokens
        .into_iter()
        .map(|t| {
            let df = sets.iter().filter(|s| s.contains(&t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            (t, idf)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0))
    });
    scored.into_iter().map(|(t, _)| t).collect()
}

// ---------------------------------------------------------------------------
// answer generation

/// Extractive generator: every gated document with a body sentence that
/// shares a content token with the query contributes its most
/// query-overlapping sentence; cited ids are exactly the quoted documents
/// in quote order. An empty gated list produces the fixed refusal.
pub fn generate_answer(query: &str, gated_docs: &[Document]) -> GeneratedAnswer {
    if gated_docs.is_empty() {
        return GeneratedAnswer { text: REFUSAL.to_string(), citations: vec![] };
    }
    let query_content = content_token_set(query);
    let mut quotes: Vec<String> = Vec::new();
    let mut citations: Vec<String> = Vec::new();
    for doc in gated_docs {
        let mut best: Option<(usize, &str)> = None;
        let body_sentences = sentences(&doc.body);
        for s in &body_sentences {
            let overlap =
                token_set(s).intersection(&query_content).count();
            if overlap >= 1 && best.map(|(b, _)| overlap > b).unwrap_or(true) {
                best = Some((overlap, s));
            }
        }
        if let Some((_, sentence)) = best {
            quotes.push(sentence.to_string());
            citations.push(doc.doc_id.clone());
        }
    }
    if quotes.is_empty() {
        return GeneratedAnswer { text: REFUSAL.to_string(), citations: vec![] };
    }
    GeneratedAnswer { text: quotes.join(" "), citations }
}

// ---------------------------------------------------------------------------
// actionability classification and extraction

const VAGUE_TOKENS: &[&str] = &["not", "helpful", "wrong", "bad", "answer"];

const FACT_MARKERS: &[&str] = &[
    "is", "are", "was", "were", "be", "must", "should", "can", "cannot", "cant", "will", "may",
    "requires", "required", "needs", "only", "restricted", "allowed",
];

/// Single-pass classification and extraction. Not actionable when the free
/// text carries fewer than three content tokens or nothing outside the
/// vague-phrase list; actionable when a declarative factual sentence is
/// present, in which case the article holds a topic title and the
/// normalized correction sentences.
pub fn classify(event: &FeedbackEvent) -> ActionabilityResult {
    let content = content_tokens(&event.free_text);
    if content.len() < 3 {
        return ActionabilityResult {
            feedback_usefulness: Usefulness::NotUseful,
            kb_candidate: false,
            reason: "free text carries fewer than 3 content tokens".to_string(),
            article: None,
        };
    }
    if content.iter().all(|t| VAGUE_TOKENS.contains(&t.as_str())) {
        return ActionabilityResult {
            feedback_usefulness: Usefulness::NotUseful,
            kb_candidate: false,
            reason: "free text contains only vague complaint phrases".to_string(),
            article: None,
        };
    }
    match extract_article(event) {
        Some(article) => ActionabilityResult {
            feedback_usefulness: Usefulness::Useful,
            kb_candidate: true,
            reason: "declarative factual correction found".to_string(),
            article: Some(article),
        },
        None => ActionabilityResult {
            feedback_usefulness: Usefulness::Useful,
            kb_candidate: false,
            reason: "no declarative factual pattern in free text".to_string(),
            article: None,
        },
    }
}

/// Extraction half of the single pass: the corrective sentences become the
/// article body (up to two, normalized), the leading content tokens of the
/// first one become the title.
pub fn extract_article(event: &FeedbackEvent) -> Option<Article> {
    let corrective: Vec<String> = sentences(&event.free_text)
        .into_iter()
        .filter(|s| {
            let toks = tokenize(s);
            let has_marker = toks.iter().any(|t| FACT_MARKERS.contains(&t.as_str()));
            let content = toks.iter().filter(|t| !is_stopword(t)).count();
            has_marker && content >= 2
        })
        .take(2)
        .collect();
    if corrective.is_empty() {
        return None;
    }
    let title_tokens: Vec<String> = content_tokens(&corrective[0])
        .into_iter()
        .filter(|t| !FACT_MARKERS.contains(&t.as_str()))
        .take(5)
        .collect();
    if title_tokens.is_empty() {
        return None;
    }
    let mut title = title_tokens.join(" ");
    if let Some(first) = title.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    let body = corrective
        .iter()
        .map(|s| {
            let mut s = s.trim().to_string();
            if !s.ends_with('.') && !s.ends_with('!') && !s.ends_with('?') {
                s.push('.');
            }
            if let Some(first) = s.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            s
        })
        .collect::<Vec<_>>()
        .join(" ");
    Some(Article { title, body })
}

// ---------------------------------------------------------------------------
// judge

/// Rule judge realizing the four-axis rubric. Absent nugget forces
/// compliance = misses and faithfulness = n_a; the remaining labels come
/// from token-overlap thresholds against the nugget body, the original
/// answer, and the retrieved context.
pub fn judge(input: &JudgeInput) -> JudgeLabels {
    let nugget_present =
        input.retrieved_context.iter().any(|d| d.doc_id == input.nugget_doc_id);
    let refusal = input.answer.trim() == REFUSAL;
    let wrong_claim_repeated = input
        .wrong_claim
        .as_deref()
        .map(|w| !w.trim().is_empty() && input.answer.to_lowercase().contains(&w.trim().to_lowercase()))
        .unwrap_or(false);

    let nugget_overlap = crate::text::content_overlap(&input.nugget.body, &input.answer);

    let compliance = if !nugget_present {
        Compliance::Misses
    } else if wrong_claim_repeated {
        Compliance::Contradicts
    } else if nugget_overlap >= 0.7 {
        Compliance::Addresses
    } else if nugget_overlap >= 0.3 {
        Compliance::Partial
    } else {
        Compliance::Misses
    };

    let faithfulness = if !nugget_present {
        Faithfulness::NotApplicable
    } else if wrong_claim_repeated {
        Faithfulness::Unfaithful
    } else if nugget_overlap >= 0.7 {
        Faithfulness::Faithful
    } else if nugget_overlap >= 0.3 {
        Faithfulness::Partial
    } else {
        Faithfulness::Unfaithful
    };

    let kept = crate::text::content_overlap(&input.original_answer, &input.answer);
    let regression = if kept >= 0.5 {
        Regression::Preserved
    } else if kept >= 0.2 {
        Regression::MinorRegression
    } else {
        Regression::MajorRegression
    };

    let groundedness = if refusal {
        // a refusal makes no claims
        Groundedness::Grounded
    } else {
        grade_groundedness(&input.answer, &input.retrieved_context)
    };

    JudgeLabels { compliance, faithfulness, regression, groundedness }
}

fn grade_groundedness(answer: &str, context: &[Document]) -> Groundedness {
    let doc_tokens: Vec<BTreeSet<String>> =
        context.iter().map(|d| token_set(&d.indexed_text())).collect();
    let mut all_strong = true;
    for sentence in sentences(answer) {
        let sent_content = content_token_set(&sentence);
        if sent_content.is_empty() {
            continue;
        }
        let support = doc_tokens
            .iter()
            .map(|dt| {
                let hit = sent_content.iter().filter(|t| dt.contains(*t)).count();
                hit as f64 / sent_content.len() as f64
            })
            .fold(0.0f64, f64::max);
        if support < 0.3 {
            return Groundedness::Hallucinated;
        }
        if support < 0.7 {
            all_strong = false;
        }
    }
    if all_strong {
        Groundedness::Grounded
    } else {
        Groundedness::MinorIssues
    }
}
