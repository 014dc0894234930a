//! Domain types shared by every module: feedback events, nuggets, their
//! indexable forms, corpus documents, and probe sets. All values are
//! immutable after construction and serialize to JSONL with snake_case
//! field names.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

/// Which production agent produced the feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Chat,
    Ticket,
}

/// Post-answer thumbs signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    ThumbsUp,
    ThumbsDown,
}

/// One conversation turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: String,
    pub text: String,
}

/// A raw post-answer feedback record.
///
/// For the ticket agent the trigger query holds the full transcript text;
/// there is no separate transcript type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub event_id: String,
    pub agent_kind: AgentKind,
    pub conversation: Vec<Turn>,
    pub trigger_query: String,
    pub original_answer: String,
    pub signal: Signal,
    pub free_text: String,
    pub cited_doc_ids: Vec<String>,
    pub customer_id: String,
}

/// The extracted factual correction: a title plus a one-to-three sentence
/// body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nugget {
    pub nugget_id: String,
    pub title: String,
    pub body: String,
    pub source_event_id: String,
    pub customer_id: String,
}

/// Construction strategy for the indexable form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
    C,
    D,
    E,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::A, Variant::B, Variant::C, Variant::D, Variant::E];

    pub fn parse(s: &str) -> Option<Variant> {
        match s.trim() {
            "A" | "a" => Some(Variant::A),
            "B" | "b" => Some(Variant::B),
            "C" | "c" => Some(Variant::C),
            "D" | "d" => Some(Variant::D),
            "E" | "e" => Some(Variant::E),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
            Variant::E => "E",
        };
        f.write_str(s)
    }
}

/// One revision applied during optimization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionEntry {
    pub iteration: u32,
    pub summary: String,
}

/// A nugget in its indexable form: anchors attached, variant recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexableNugget {
    pub nugget: Nugget,
    pub anchors: Vec<String>,
    pub variant: Variant,
    pub iterations_used: u32,
    pub revision_log: Vec<RevisionEntry>,
}

/// Origin of a retrievable document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocSource {
    Kb,
    Nugget,
}

/// A retrievable unit: knowledge-base article or rendered nugget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub source: DocSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<String>>,
}

/// Separator between the document body and the trailing anchor block in the
/// indexed text.
pub const ANCHOR_SEPARATOR: &str = "— related questions —";

impl Document {
    /// Text fed to the sparse and dense channels: title, body, and — when
    /// anchors are present — a trailing block with one anchor per line.
    pub fn indexed_text(&self) -> String {
        let mut out = String::with_capacity(self.title.len() + self.body.len() + 32);
        out.push_str(&self.title);
        out.push('\n');
        out.push_str(&self.body);
        if let Some(anchors) = &self.anchors {
            if !anchors.is_empty() {
                out.push('\n');
                out.push_str(ANCHOR_SEPARATOR);
                for a in anchors {
                    out.push('\n');
                    out.push_str(a);
                }
            }
        }
        out
    }
}

/// Queries used to stress-test a candidate from outside the index: the
/// trigger plus fresh paraphrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub trigger: String,
    pub paraphrases: Vec<String>,
    pub pass_policy: PassPolicy,
}

impl ProbeSet {
    /// Trigger first, then paraphrases.
    pub fn queries(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.trigger.as_str()).chain(self.paraphrases.iter().map(String::as_str))
    }

    pub fn query_count(&self) -> usize {
        1 + self.paraphrases.len()
    }
}

/// Convergence rule for the optimization loop: retrieved for at least one
/// probe, or for every probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassPolicy {
    #[default]
    Any,
    All,
}

/// A single invariant violation. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid nugget form: {0:?}")]
    Rejected(Vec<Violation>),
}

/// Check the shape invariants of a nugget. Returns every violation found;
/// an empty list means the nugget is valid.
pub fn validate_nugget(n: &Nugget) -> Vec<Violation> {
    let mut v = Vec::new();
    if n.title.trim().is_empty() {
        v.push(Violation::new("title", "title must be nonempty"));
    }
    if n.body.trim().is_empty() {
        v.push(Violation::new("body", "body must be nonempty"));
    } else {
        let count = text::sentences(&n.body).len();
        if !(1..=3).contains(&count) {
            v.push(Violation::new(
                "body",
                format!("body must contain 1-3 sentences, found {count}"),
            ));
        }
    }
    v
}

/// Anchor-count bounds per variant (inclusive).
pub fn anchor_bounds(variant: Variant) -> (usize, usize) {
    match variant {
        Variant::A => (0, 0),
        Variant::B => (1, 1),
        Variant::C | Variant::D => (5, 5),
        Variant::E => (1, 8),
    }
}

/// Check the invariants of an indexable nugget: nugget shape, the
/// variant-to-anchor-count mapping, and the iteration budget.
pub fn validate_indexable(c: &IndexableNugget) -> Vec<Violation> {
    let mut v = validate_nugget(&c.nugget);
    let (lo, hi) = anchor_bounds(c.variant);
    let n = c.anchors.len();
    if n < lo || n > hi {
        v.push(Violation::new(
            "anchors",
            format!("variant {} requires {lo}-{hi} anchors, found {n}", c.variant),
        ));
    }
    if c.iterations_used > 3 {
        v.push(Violation::new("iterations_used", "at most 3 iterations"));
    }
    if c.anchors.iter().any(|a| a.trim().is_empty()) {
        v.push(Violation::new("anchors", "anchors must be nonempty"));
    }
    v
}

/// True when no anchor is a verbatim copy of the trigger query
/// (case-insensitive exact match).
pub fn anchors_avoid_trigger(anchors: &[String], trigger: &str) -> bool {
    let t = trigger.trim().to_lowercase();
    anchors.iter().all(|a| a.trim().to_lowercase() != t)
}

/// Render an indexable nugget into its corpus document. Pure: identical
/// inputs produce byte-identical documents.
pub fn render_indexable(c: &IndexableNugget) -> Result<Document, ModelError> {
    let violations = validate_indexable(c);
    if !violations.is_empty() {
        return Err(ModelError::Rejected(violations));
    }
    Ok(Document {
        doc_id: nugget_doc_id(&c.nugget.nugget_id),
        title: c.nugget.title.clone(),
        body: c.nugget.body.clone(),
        source: DocSource::Nugget,
        anchors: if c.anchors.is_empty() { None } else { Some(c.anchors.clone()) },
    })
}

/// Document id for a nugget: `"nugget:" + nugget_id`.
pub fn nugget_doc_id(nugget_id: &str) -> String {
    format!("nugget:{nugget_id}")
}
