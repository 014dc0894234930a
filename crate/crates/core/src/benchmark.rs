//! Bundled synthetic benchmark: a desk-scale corpus with planted feedback
//! events, a query log seeded with historical paraphrases and decoys, and
//! negative-control traffic. Generation is fully deterministic in the
//! configured seed.

use serde::{Deserialize, Serialize};

use crate::eval::QueryRecord;
use crate::model::{AgentKind, DocSource, Document, FeedbackEvent, Signal, Turn};
use crate::provider::lexicon::bundled;
use crate::rng::{mix, ns, SplitMix64};

const ROLES: &[&str] = &[
    "analyst", "admin", "owner", "manager", "operator", "reviewer", "auditor", "supervisor",
    "contributor", "moderator",
];

const ACTIONS: &[&str] = &[
    "reset", "configure", "export", "import", "archive", "merge", "rotate", "revoke", "assign",
    "migrate", "restore", "delete", "publish", "approve", "suspend", "renew",
];

const OBJECTS: &[&str] = &[
    "password", "token", "dashboard", "report", "invoice", "webhook", "certificate", "license",
    "workspace", "cluster", "backup", "queue", "policy", "schedule", "domain", "template",
    "widget", "dataset", "pipeline", "alert",
];

const PRODUCTS: &[&str] = &["portal", "console", "gateway", "platform", "hub", "suite"];

const VERSIONS: &[&str] = &["v7", "v8", "v9", "v10", "v11", "v12"];

/// Vocabulary for the fully token-disjoint negative-control fixture. None
/// of these words appear in any planted correction, anchor template, or
/// lexicon entry.
const NATURE: &[&str] = &[
    "granite", "basalt", "quartz", "meadow", "glacier", "fjord", "tundra", "lagoon", "savanna",
    "dune", "comet", "nebula", "quasar", "aurora", "monsoon", "typhoon", "estuary", "marsh",
    "lichen", "moss", "heron", "osprey", "walrus", "narwhal", "plankton", "krill", "sediment",
    "stratum", "moraine", "crevasse", "geyser", "caldera", "butte", "mesa", "atoll", "reef",
    "kelp", "tide", "current", "salinity",
];

/// Support vocabulary reserved for negative-control traffic: never used by
/// a planted correction tuple, absent from the synonym lexicon.
const RESERVED_OBJECTS: &[&str] = &[
    "signature", "avatar", "banner", "shortcut", "bookmark", "coupon", "shipment", "locale",
    "currency", "timezone", "favicon", "sitemap", "changelog", "glossary", "watermark",
    "playlist", "transcript", "heatmap", "screenshot", "watchlist",
];

/// Actions reserved for negative-control traffic; lexicon-covered but never
/// part of a planted correction, so their drift space stays outside every
/// anchor.
const RESERVED_ACTIONS: &[&str] = &[
    "validate", "monitor", "download", "upload", "share", "sync", "rebuild", "retry", "invite",
    "reject", "cancel", "connect", "deploy", "generate", "duplicate", "edit",
];

const FILLER_EXTRAS: &[&str] = &[
    "page", "guide", "walkthrough", "weekly", "monthly", "nightly", "automatically", "manually",
    "enterprise", "tenants", "regions", "primer", "limits", "defaults", "advanced", "basics",
];

/// Generation knobs. Defaults satisfy the bundled-benchmark floor: at
/// least 2,000 knowledge-base documents and 50 planted feedback events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub kb_docs: usize,
    pub events: usize,
    pub historical_per_event: usize,
    pub decoys_per_event: usize,
    pub noise_queries: usize,
    pub negative_queries: usize,
    pub disjoint_queries: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 0x5EED_BEEF,
            kb_docs: 2000,
            events: 50,
            historical_per_event: 2,
            decoys_per_event: 1,
            noise_queries: 400,
            negative_queries: 1000,
            disjoint_queries: 1000,
        }
    }
}

/// The generated benchmark fixture.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub corpus: Vec<Document>,
    pub events: Vec<FeedbackEvent>,
    pub query_log: Vec<QueryRecord>,
    /// Planted historical paraphrases per event id (mining ground truth).
    pub planted_historical: Vec<(String, String)>,
    /// Planted below-threshold decoys per event id; these must never
    /// survive mining.
    pub decoys: Vec<(String, String)>,
    /// Topic-disjoint random queries (share generic vocabulary only).
    pub negative_queries: Vec<String>,
    /// Fully token-disjoint queries (nature vocabulary).
    pub disjoint_queries: Vec<String>,
}

struct Topic {
    role: &'static str,
    second_role: &'static str,
    action: &'static str,
    object: &'static str,
    product: &'static str,
    version: &'static str,
}

fn topic(i: usize) -> Topic {
    Topic {
        role: ROLES[i % ROLES.len()],
        second_role: ROLES[(i + 5) % ROLES.len()],
        action: ACTIONS[(i * 3 + 1) % ACTIONS.len()],
        object: OBJECTS[(i * 7 + 2) % OBJECTS.len()],
        product: PRODUCTS[i % PRODUCTS.len()],
        version: VERSIONS[(i + 3) % VERSIONS.len()],
    }
}

fn trigger_query(i: usize, t: &Topic) -> String {
    match i % 4 {
        0 => format!(
            "why can't my {} {} another {} in the {} {}?",
            t.role, t.action, t.object, t.product, t.version
        ),
        1 => format!(
            "why is the {} {} off for my {} in {} {}?",
            t.object, t.action, t.role, t.product, t.version
        ),
        2 => format!(
            "how can my {} {} another {} for them in {} {}?",
            t.role, t.action, t.object, t.product, t.version
        ),
        _ => format!(
            "what can a {} do to {} the {} from the {} {}?",
            t.role, t.action, t.object, t.product, t.version
        ),
    }
}

fn free_text(t: &Topic) -> String {
    format!(
        "in {} {} the {} {} is restricted to the {} role. the {} role can view the {} but \
         cannot {} it.",
        t.product, t.version, t.object, t.action, t.second_role, t.role, t.object, t.action
    )
}

fn wrong_answer(t: &Topic) -> String {
    format!(
        "Any {} with {} access can {} the {} directly from the admin panel.",
        t.role, t.product, t.action, t.object
    )
}

/// Build the full benchmark fixture.
pub fn generate(cfg: &BenchmarkConfig) -> Benchmark {
    let topics: Vec<Topic> = (0..cfg.events).map(topic).collect();

    let events: Vec<FeedbackEvent> = topics
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let q0 = trigger_query(i, t);
            FeedbackEvent {
                event_id: format!("ev-{i:03}"),
                agent_kind: AgentKind::Chat,
                conversation: vec![
                    Turn { role: "user".into(), text: q0.clone() },
                    Turn { role: "assistant".into(), text: wrong_answer(t) },
                ],
                trigger_query: q0,
                original_answer: wrong_answer(t),
                signal: Signal::ThumbsDown,
                free_text: free_text(t),
                cited_doc_ids: vec![format!("kb-comp-{i:03}-0")],
                customer_id: "bench".into(),
            }
        })
        .collect();

    let corpus = build_corpus(cfg, &topics);
    let (query_log, planted_historical, decoys) = build_query_log(cfg, &events);
    let negative_queries = build_negative_queries(cfg, &topics);
    let disjoint_queries = build_disjoint_queries(cfg);

    Benchmark {
        corpus,
        events,
        query_log,
        planted_historical,
        decoys,
        negative_queries,
        disjoint_queries,
    }
}

fn build_corpus(cfg: &BenchmarkConfig, topics: &[Topic]) -> Vec<Document> {
    let mut docs: Vec<Document> = Vec::with_capacity(cfg.kb_docs);

    // per-event competitors: they cover every trigger-template token at
    // higher term frequency than the nugget, sprinkle in the object and
    // action synonym vocabulary real corpora carry, but never mention the
    // corrective role restriction itself
    let lexicon = bundled();
    for (i, t) in topics.iter().enumerate() {
        let (role, action, object, product, version) =
            (t.role, t.action, t.object, t.product, t.version);
        let obj_syn = lexicon.synonyms(object).unwrap_or_default();
        let act_syn = lexicon.synonyms(action).unwrap_or_default();
        let osyn = |k: usize| obj_syn.get(k % obj_syn.len().max(1)).map(String::as_str).unwrap_or(object);
        let asyn = |k: usize| act_syn.get(k % act_syn.len().max(1)).map(String::as_str).unwrap_or(action);
        docs.push(kb(
            format!("kb-comp-{i:03}-0"),
            format!("{action}ing your own {object} in the {product} admin panel"),
            format!(
                "Open the {product} {version} admin panel and choose the {object} {action} \
                 option to {action} your own {object}. The {role} role can always {action} a \
                 personal {object} or {} from the admin panel. Why can't my {object} {action} \
                 finish? Some teams call a {action} a {}. A {object} {action} confirmation \
                 arrives within a minute.",
                osyn(0), asyn(0),
            ),
        ));
        docs.push(kb(
            format!("kb-comp-{i:03}-1"),
            format!("{object} {action} guide for {product} {version}"),
            format!(
                "The {product} {version} settings page supports {object} {action} for every \
                 teammate. Most teams {action} the {object} weekly from the admin panel. How \
                 do i {action} the {object} or {} for another teammate? Ask an admin if the \
                 {object} {} option is missing.",
                osyn(1), asyn(1),
            ),
        ));
        docs.push(kb(
            format!("kb-comp-{i:03}-2"),
            format!("troubleshooting {object} {action} problems in {product}"),
            format!(
                "If a {object} {action} attempt keeps failing inside the {product} {version} \
                 settings, retry from the admin panel. Why is the {object} {action} failing \
                 for my team? A failing {} usually means the {} is locked.",
                asyn(2), osyn(2),
            ),
        ));
        docs.push(kb(
            format!("kb-comp-{i:03}-3"),
            format!("{product} {version} release notes"),
            format!(
                "The {product} {version} release improves {object} handling and adds a faster \
                 {action} flow for admin panel users. When does the {version} {} reach my \
                 region? The shared {object} and {} list loads faster for the whole team.",
                asyn(1), osyn(0),
            ),
        ));
        docs.push(kb(
            format!("kb-comp-{i:03}-4"),
            format!("what permission does a {role} need in {product} {version}"),
            format!(
                "A {role} needs no extra permission to {action} a personal {object} in \
                 {product} {version}. Which permission does the {object} {} need? Check the \
                 permission page when an {} option looks disabled for a {role}.",
                asyn(2), osyn(1),
            ),
        ));
        docs.push(kb(
            format!("kb-comp-{i:03}-5"),
            format!("how can a {role} manage the {object} in {product}"),
            format!(
                "Any {role} can manage a personal {object} from the {product} {version} admin \
                 panel. Where is my {object} {action} option? The {} page shows every {} \
                 option a {role} can use for another teammate.",
                osyn(2), asyn(0),
            ),
        ));
    }

    // nature docs so fully-disjoint queries still have sparse matches
    let nature_docs = 300.min(cfg.kb_docs.saturating_sub(docs.len()));
    let mut rng = SplitMix64::new(mix(&[cfg.seed, ns::BENCHMARK, 0xDA]));
    for j in 0..nature_docs {
        let a = *rng.pick(NATURE);
        let b = *rng.pick(NATURE);
        let c = *rng.pick(NATURE);
        docs.push(kb(
            format!("kb-nature-{j:04}"),
            format!("{a} {b} field survey"),
            format!(
                "The {a} {b} measurements were collected across three seasons. Observers \
                 recorded {c} levels alongside the {b} readings."
            ),
        ));
    }

    // misc support articles over the reserved vocabulary
    let misc_docs = 300.min(cfg.kb_docs.saturating_sub(docs.len()));
    let mut rng = SplitMix64::new(mix(&[cfg.seed, ns::BENCHMARK, 0xE2]));
    for j in 0..misc_docs {
        let action = *rng.pick(RESERVED_ACTIONS);
        let object = *rng.pick(RESERVED_OBJECTS);
        let other = *rng.pick(RESERVED_OBJECTS);
        let extra_a = *rng.pick(FILLER_EXTRAS);
        let extra_b = *rng.pick(FILLER_EXTRAS);
        docs.push(kb(
            format!("kb-misc-{j:04}"),
            format!("{object} {action} {extra_a}"),
            format!(
                "Teams {action} the {object} from the {extra_a} page. Why can't my team \
                 {action} a {object} with the {other}? The {object} {extra_b} limits apply \
                 to every plan.",
            ),
        ));
    }

    // filler support articles over the remaining budget
    let mut rng = SplitMix64::new(mix(&[cfg.seed, ns::BENCHMARK, 0xF1]));
    let mut j = 0;
    while docs.len() < cfg.kb_docs {
        let action = *rng.pick(ACTIONS);
        let object = *rng.pick(OBJECTS);
        let product = *rng.pick(PRODUCTS);
        let version = *rng.pick(VERSIONS);
        let extra_a = *rng.pick(FILLER_EXTRAS);
        let extra_b = *rng.pick(FILLER_EXTRAS);
        let extra_c = *rng.pick(FILLER_EXTRAS);
        let other_object = *rng.pick(OBJECTS);
        let other_action = *rng.pick(ACTIONS);
        let faq = match j % 6 {
            0 => format!("Why can't my team {action} the {object} there?"),
            1 => format!("How do i {action} the {object} in {product}?"),
            2 => format!("When does my {object} {action} finish?"),
            3 => format!("Which {object} {action} is the default?"),
            4 => format!("Where is my {object} {action} history?"),
            _ => format!("What can a {version} user do about a slow {action}?"),
        };
        docs.push(kb(
            format!("kb-fill-{j:05}"),
            format!("{object} {action} {extra_a}"),
            format!(
                "This {extra_a} covers how teams {action} a {object} in the {product} \
                 {version}. The {object} {extra_b} defaults apply unless an admin changes \
                 them in the {product} settings. Some teams also {other_action} the \
                 {other_object} {extra_c} from the same page before they {action} the \
                 {object}. {faq} Check the {product} settings page for {extra_b} limits and \
                 {extra_c} notes. A short {extra_a} for the {object} appears after every \
                 {version} upgrade.",
            ),
        ));
        j += 1;
    }
    docs
}

fn kb(id: String, title: String, body: String) -> Document {
    Document { doc_id: id, title, body, source: DocSource::Kb, anchors: None }
}

/// Substitute exactly one lexicon-covered content token. Keeps the cosine
/// and re-rank pair scores of the result above the mining thresholds.
fn mild_paraphrase(query: &str, rng: &mut SplitMix64) -> String {
    let lexicon = bundled();
    let mut words: Vec<String> = query
        .trim()
        .trim_end_matches(['?', '.', '!'])
        .split_whitespace()
        .map(str::to_lowercase)
        .collect();
    let hits: Vec<usize> = (0..words.len())
        .filter(|&i| {
            let core: String = words[i].chars().filter(|c| c.is_alphanumeric()).collect();
            lexicon.contains(&core)
        })
        .collect();
    if let Some(&i) = hits.get(rng.below(hits.len().max(1))).or(hits.first()) {
        let core: String = words[i].chars().filter(|c| c.is_alphanumeric()).collect();
        let synonyms = lexicon.synonyms(&core).expect("hit has synonyms");
        words[i] = rng.pick(synonyms).clone();
    }
    format!("{}?", words.join(" "))
}

/// Heavy drift: substitute four covered tokens and drop two function
/// words, pushing cosine below the mining floor.
fn decoy_paraphrase(query: &str, rng: &mut SplitMix64) -> String {
    let lexicon = bundled();
    let mut words: Vec<String> = query
        .trim()
        .trim_end_matches(['?', '.', '!'])
        .split_whitespace()
        .map(str::to_lowercase)
        .collect();
    let hits: Vec<usize> = (0..words.len())
        .filter(|&i| {
            let core: String = words[i].chars().filter(|c| c.is_alphanumeric()).collect();
            lexicon.contains(&core)
        })
        .collect();
    for &i in hits.iter().take(4) {
        let core: String = words[i].chars().filter(|c| c.is_alphanumeric()).collect();
        let synonyms = lexicon.synonyms(&core).expect("hit has synonyms");
        words[i] = rng.pick(synonyms).clone();
    }
    let mut dropped = 0;
    let mut k = 0;
    while k < words.len() && dropped < 2 {
        if crate::text::is_stopword(&words[k]) {
            words.remove(k);
            dropped += 1;
        } else {
            k += 1;
        }
    }
    format!("{}?", words.join(" "))
}

fn build_query_log(
    cfg: &BenchmarkConfig,
    events: &[FeedbackEvent],
) -> (Vec<QueryRecord>, Vec<(String, String)>, Vec<(String, String)>) {
    let mut log: Vec<QueryRecord> = Vec::new();
    let mut planted: Vec<(String, String)> = Vec::new();
    let mut decoys: Vec<(String, String)> = Vec::new();

    for (i, ev) in events.iter().enumerate() {
        let mut rng = SplitMix64::new(mix(&[cfg.seed, ns::BENCHMARK, 0x10, i as u64]));
        let mut seen: Vec<String> = Vec::new();
        let mut guard = 0;
        while seen.len() < cfg.historical_per_event && guard < 100 {
            guard += 1;
            let p = mild_paraphrase(&ev.trigger_query, &mut rng);
            if p != ev.trigger_query && !seen.contains(&p) {
                seen.push(p.clone());
                planted.push((ev.event_id.clone(), p.clone()));
                log.push(QueryRecord { query: p });
            }
        }
        for _ in 0..cfg.decoys_per_event {
            let d = decoy_paraphrase(&ev.trigger_query, &mut rng);
            decoys.push((ev.event_id.clone(), d.clone()));
            log.push(QueryRecord { query: d });
        }
    }

    let mut rng = SplitMix64::new(mix(&[cfg.seed, ns::BENCHMARK, 0x11]));
    for _ in 0..cfg.noise_queries {
        let action = *rng.pick(ACTIONS);
        let object = *rng.pick(OBJECTS);
        let product = *rng.pick(PRODUCTS);
        let extra = *rng.pick(FILLER_EXTRAS);
        log.push(QueryRecord {
            query: format!("how do teams {action} the {object} {extra} in {product}?"),
        });
    }
    (log, planted, decoys)
}

/// Queries about support topics no event covers: they share generic
/// vocabulary with the corpus but nothing with a planted correction tuple,
/// so hits measure unwanted generalization rather than shared wording.
fn build_negative_queries(cfg: &BenchmarkConfig, _topics: &[Topic]) -> Vec<String> {
    let mut rng = SplitMix64::new(mix(&[cfg.seed, ns::BENCHMARK, 0x20]));
    (0..cfg.negative_queries)
        .map(|_| {
            let action = *rng.pick(RESERVED_ACTIONS);
            let object = *rng.pick(RESERVED_OBJECTS);
            let extra = *rng.pick(FILLER_EXTRAS);
            match rng.below(3) {
                0 => format!("when do teams {action} the {object} {extra}?"),
                1 => format!("is the {object} {action} {extra} in our plan?"),
                _ => format!("{object} {action} {extra} questions"),
            }
        })
        .collect()
}

/// Nature-vocabulary queries sharing no token with any planted correction.
fn build_disjoint_queries(cfg: &BenchmarkConfig) -> Vec<String> {
    let mut rng = SplitMix64::new(mix(&[cfg.seed, ns::BENCHMARK, 0x21]));
    (0..cfg.disjoint_queries)
        .map(|_| {
            let a = *rng.pick(NATURE);
            let b = *rng.pick(NATURE);
            let c = *rng.pick(NATURE);
            format!("{a} {b} readings near {c} basin")
        })
        .collect()
}
