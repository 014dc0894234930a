//! Single abstraction for every text-generation task in the pipeline:
//! classification, extraction, anchor generation, paraphrase, reflection,
//! answer generation, and judging. Ships a deterministic rule-based
//! simulator backend and an HTTP backend for chat-completions-style
//! services; both satisfy the same output schemas.

pub mod http;
pub mod lexicon;
pub mod sim;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{JudgeInput, JudgeLabels};
use crate::model::{Document, FeedbackEvent, Nugget};
use crate::pipeline::{ActionabilityResult, Article, ProbeOutcome};
use crate::text::tokenize;

/// Task discriminator; one prompt structure per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ClassifyFeedback,
    ExtractNugget,
    GenerateAnchors,
    Paraphrase,
    Reflect,
    GenerateAnswer,
    Judge,
}

/// Kind-specific structured input. The payload shape always matches the
/// kind by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskPayload {
    ClassifyFeedback {
        event: FeedbackEvent,
    },
    ExtractNugget {
        event: FeedbackEvent,
    },
    GenerateAnchors {
        nugget: Nugget,
        trigger_query: Option<String>,
        count: usize,
    },
    Paraphrase {
        query: String,
        count: usize,
        vocabulary: Vec<String>,
    },
    Reflect {
        input: ReflectionInput,
    },
    GenerateAnswer {
        query: String,
        gated_docs: Vec<Document>,
    },
    Judge {
        input: JudgeInput,
    },
}

impl TaskPayload {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskPayload::ClassifyFeedback { .. } => TaskKind::ClassifyFeedback,
            TaskPayload::ExtractNugget { .. } => TaskKind::ExtractNugget,
            TaskPayload::GenerateAnchors { .. } => TaskKind::GenerateAnchors,
            TaskPayload::Paraphrase { .. } => TaskKind::Paraphrase,
            TaskPayload::Reflect { .. } => TaskKind::Reflect,
            TaskPayload::GenerateAnswer { .. } => TaskKind::GenerateAnswer,
            TaskPayload::Judge { .. } => TaskKind::Judge,
        }
    }
}

/// One text-generation task. The seed fully determines simulator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextTask {
    pub payload: TaskPayload,
    pub seed: u64,
}

/// What the reflector sees for a failed candidate: the current indexable
/// form, the trigger, the failed probes with their outcomes and answers,
/// and the competitor documents that outranked the candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionInput {
    pub nugget: Nugget,
    pub anchors: Vec<String>,
    pub trigger_query: String,
    pub probes: Vec<ProbeOutcome>,
    pub competitors: Vec<Document>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_text: Option<String>,
}

/// A revised indexable representation. The factual sentences of the
/// original body are always preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutput {
    pub title: String,
    pub body: String,
    pub anchors: Vec<String>,
    pub summary: String,
}

/// Extractive answer plus the documents it cites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub text: String,
    pub citations: Vec<String>,
}

/// Kind-specific structured output of [`Provider::execute`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskOutput {
    Classification(ActionabilityResult),
    Extraction(Option<Article>),
    Anchors(Vec<String>),
    Paraphrases(Vec<String>),
    Reflection(ReflectionOutput),
    Answer(GeneratedAnswer),
    Judgement(JudgeLabels),
}

/// Which backend serves the tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Sim,
    Http,
}

/// Provider settings. The http backend reads its API key from the
/// `NUGGET_FORGE_API_KEY` environment variable; the key is never logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub backend: Backend,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Sim,
            endpoint_url: None,
            model_name: None,
            timeout_ms: 30_000,
            max_retries: 2,
        }
    }
}

/// Cumulative usage counters; monotone non-decreasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: u64,
}

#[derive(Debug, Default)]
struct Counters {
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
    calls: AtomicU64,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("provider output failed schema validation: {reason}; raw body: {raw}")]
    Schema { reason: String, raw: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("http backend requires endpoint_url")]
    MissingEndpoint,
}

/// Text-generation provider: routes tasks to the configured backend and
/// keeps usage counters. Safe to share across threads.
#[derive(Debug)]
pub struct Provider {
    config: ProviderConfig,
    counters: Counters,
}

impl Provider {
    /// Deterministic simulator provider.
    pub fn sim() -> Self {
        Self::new(ProviderConfig::default())
    }

    pub fn new(config: ProviderConfig) -> Self {
        Self { config, counters: Counters::default() }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            input_tokens: self.counters.input_tokens.load(Ordering::Relaxed),
            output_tokens: self.counters.output_tokens.load(Ordering::Relaxed),
            calls: self.counters.calls.load(Ordering::Relaxed),
        }
    }

    /// Identifier folded into configuration fingerprints.
    pub fn fingerprint_tag(&self) -> String {
        match self.config.backend {
            Backend::Sim => "sim".to_string(),
            Backend::Http => format!(
                "http:{}:{}",
                self.config.endpoint_url.as_deref().unwrap_or(""),
                self.config.model_name.as_deref().unwrap_or("")
            ),
        }
    }

    /// Run one task. The simulator path is pure in (payload, seed); the
    /// http path parses a strict JSON body and surfaces schema errors
    /// without repair.
    pub fn execute(&self, task: &TextTask) -> Result<TaskOutput, ProviderError> {
        validate_payload(&task.payload)?;
        self.counters.calls.fetch_add(1, Ordering::Relaxed);
        self.counters.input_tokens.fetch_add(rough_tokens(&task.payload), Ordering::Relaxed);
        let output = match self.config.backend {
            Backend::Sim => sim::execute(task),
            Backend::Http => http::call(&self.config, task),
        }?;
        self.counters.output_tokens.fetch_add(rough_tokens(&output), Ordering::Relaxed);
        Ok(output)
    }
}

fn rough_tokens<T: Serialize>(value: &T) -> u64 {
    let json = serde_json::to_string(value).unwrap_or_default();
    tokenize(&json).len() as u64
}

/// Rejects payloads whose parameters are out of contract before any call
/// is made or counted.
fn validate_payload(payload: &TaskPayload) -> Result<(), ProviderError> {
    match payload {
        TaskPayload::Paraphrase { count, .. } => {
            if !(1..=5).contains(count) {
                return Err(ProviderError::InvalidTask(format!(
                    "paraphrase count must be in 1..=5, got {count}"
                )));
            }
        }
        TaskPayload::GenerateAnchors { count, .. } => {
            if !(1..=8).contains(count) {
                return Err(ProviderError::InvalidTask(format!(
                    "anchor count must be in 1..=8, got {count}"
                )));
            }
        }
        TaskPayload::GenerateAnswer { .. }
        | TaskPayload::ClassifyFeedback { .. }
        | TaskPayload::ExtractNugget { .. }
        | TaskPayload::Reflect { .. }
        | TaskPayload::Judge { .. } => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentKind, Signal};

    fn event(free_text: &str) -> FeedbackEvent {
        FeedbackEvent {
            event_id: "ev-1".into(),
            agent_kind: AgentKind::Chat,
            conversation: vec![],
            trigger_query: "why can't my analyst reset a teammate password in the portal?".into(),
            original_answer: "anyone with admin access can reset passwords".into(),
            signal: Signal::ThumbsDown,
            free_text: free_text.into(),
            cited_doc_ids: vec![],
            customer_id: "acme".into(),
        }
    }

    #[test]
    fn sim_is_deterministic_per_task_and_seed() {
        let provider = Provider::sim();
        let task = TextTask {
            payload: TaskPayload::Paraphrase {
                query: "why can't my analyst reset a teammate password in the portal?".into(),
                count: 3,
                vocabulary: vec![],
            },
            seed: 99,
        };
        let a = provider.execute(&task).unwrap();
        let b = provider.execute(&task).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_count_is_rejected_before_any_call() {
        let provider = Provider::sim();
        let task = TextTask {
            payload: TaskPayload::Paraphrase { query: "q".into(), count: 9, vocabulary: vec![] },
            seed: 1,
        };
        assert!(matches!(provider.execute(&task), Err(ProviderError::InvalidTask(_))));
        assert_eq!(provider.counters().calls, 0);
    }

    #[test]
    fn counters_increment_once_per_execute() {
        let provider = Provider::sim();
        let task = TextTask {
            payload: TaskPayload::ClassifyFeedback {
                event: event("in portal v8 the reset action is restricted to the owner role."),
            },
            seed: 5,
        };
        provider.execute(&task).unwrap();
        let after_one = provider.counters();
        assert_eq!(after_one.calls, 1);
        assert!(after_one.input_tokens > 0);
        provider.execute(&task).unwrap();
        let after_two = provider.counters();
        assert_eq!(after_two.calls, 2);
        assert!(after_two.input_tokens >= after_one.input_tokens);
        assert!(after_two.output_tokens >= after_one.output_tokens);
    }

    #[test]
    fn http_without_endpoint_fails_fast() {
        let provider = Provider::new(ProviderConfig {
            backend: Backend::Http,
            ..ProviderConfig::default()
        });
        let task = TextTask {
            payload: TaskPayload::Paraphrase { query: "q".into(), count: 1, vocabulary: vec![] },
            seed: 1,
        };
        assert!(matches!(provider.execute(&task), Err(ProviderError::MissingEndpoint)));
    }
}
