//! HTTP backend for chat-completions-style services. Sends one JSON
//! request per task and expects `choices[0].message.content` to be a
//! single JSON object matching the task's output schema. Schema failures
//! surface with the raw body attached and are never repaired or retried;
//! transport failures retry up to `max_retries`.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::provider::{ProviderConfig, ProviderError, TaskKind, TaskOutput, TextTask};

/// Environment variable carrying the API key. The value is sent as a
/// bearer token and never logged.
pub const API_KEY_ENV: &str = "NUGGET_FORGE_API_KEY";

pub fn call(cfg: &ProviderConfig, task: &TextTask) -> Result<TaskOutput, ProviderError> {
    let endpoint = cfg.endpoint_url.as_deref().ok_or(ProviderError::MissingEndpoint)?;
    let body = request_body(cfg, task);
    let api_key = std::env::var(API_KEY_ENV).ok();

    let attempts = cfg.max_retries + 1;
    let mut last_error = String::new();
    for _ in 0..attempts {
        let mut request = ureq::post(endpoint)
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .set("content-type", "application/json");
        if let Some(key) = &api_key {
            request = request.set("authorization", &format!("Bearer {key}"));
        }
        match request.send_string(&body) {
            Ok(response) => {
                let raw = response.into_string().map_err(|e| ProviderError::Transport {
                    attempts,
                    message: format!("failed reading response body: {e}"),
                })?;
                return parse_response(task.payload.kind(), &raw);
            }
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                last_error = format!("status {code}");
            }
            Err(ureq::Error::Status(code, response)) => {
                let detail = response.into_string().unwrap_or_default();
                return Err(ProviderError::Transport {
                    attempts: 1,
                    message: format!("status {code}: {detail}"),
                });
            }
            Err(e) => {
                last_error = e.to_string();
            }
        }
    }
    Err(ProviderError::Transport { attempts, message: last_error })
}

/// Chat-completions request body: a schema instruction plus the payload as
/// JSON, at temperature zero.
pub fn request_body(cfg: &ProviderConfig, task: &TextTask) -> String {
    let kind = task.payload.kind();
    let system = format!(
        "You perform the task '{}'. Respond with a single JSON object matching this schema: {}. \
         No prose, no code fences.",
        kind_name(kind),
        output_schema(kind)
    );
    let user = serde_json::to_string(&task.payload).expect("payload serializes");
    json!({
        "model": cfg.model_name.clone().unwrap_or_else(|| "default".to_string()),
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
        "temperature": 0,
    })
    .to_string()
}

fn kind_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::ClassifyFeedback => "classify_feedback",
        TaskKind::ExtractNugget => "extract_nugget",
        TaskKind::GenerateAnchors => "generate_anchors",
        TaskKind::Paraphrase => "paraphrase",
        TaskKind::Reflect => "reflect",
        TaskKind::GenerateAnswer => "generate_answer",
        TaskKind::Judge => "judge",
    }
}

fn output_schema(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::ClassifyFeedback => {
            r#"{"feedback_usefulness":"useful|not_useful","kb_candidate":bool,"reason":str,"article":{"title":str,"body":str}|null}"#
        }
        TaskKind::ExtractNugget => r#"{"article":{"title":str,"body":str}|null}"#,
        TaskKind::GenerateAnchors => r#"{"anchors":[str]}"#,
        TaskKind::Paraphrase => r#"{"paraphrases":[str]}"#,
        TaskKind::Reflect => r#"{"title":str,"body":str,"anchors":[str],"summary":str}"#,
        TaskKind::GenerateAnswer => r#"{"answer":str,"citations":[str]}"#,
        TaskKind::Judge => {
            r#"{"compliance":"addresses|partial|misses|contradicts","faithfulness":"faithful|partial|unfaithful|n_a","regression":"preserved|minor_regression|major_regression","groundedness":"grounded|minor_issues|hallucinated"}"#
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct ExtractionBody {
    article: Option<crate::pipeline::Article>,
}

#[derive(Deserialize)]
struct AnchorsBody {
    anchors: Vec<String>,
}

#[derive(Deserialize)]
struct ParaphrasesBody {
    paraphrases: Vec<String>,
}

#[derive(Deserialize)]
struct AnswerBody {
    answer: String,
    #[serde(default)]
    citations: Vec<String>,
}

/// Parse the provider response for a task kind. Any shape violation is a
/// schema error carrying the raw text.
pub fn parse_response(kind: TaskKind, raw: &str) -> Result<TaskOutput, ProviderError> {
    let schema_err = |reason: String| ProviderError::Schema { reason, raw: raw.to_string() };
    let chat: ChatResponse = serde_json::from_str(raw)
        .map_err(|e| schema_err(format!("not a chat-completions body: {e}")))?;
    let content = &chat
        .choices
        .first()
        .ok_or_else(|| schema_err("choices array is empty".to_string()))?
        .message
        .content;
    parse_content(kind, content).map_err(|reason| schema_err(reason))
}

/// Serialize a task output into the wire content object for its kind:
/// the exact JSON shape a conforming http backend must produce. The
/// simulator's outputs round-trip through this form, which keeps both
/// backends on one schema.
pub fn content_json(output: &TaskOutput) -> String {
    match output {
        TaskOutput::Classification(r) => serde_json::to_string(r),
        TaskOutput::Extraction(article) => {
            serde_json::to_string(&serde_json::json!({ "article": article }))
        }
        TaskOutput::Anchors(anchors) => {
            serde_json::to_string(&serde_json::json!({ "anchors": anchors }))
        }
        TaskOutput::Paraphrases(p) => {
            serde_json::to_string(&serde_json::json!({ "paraphrases": p }))
        }
        TaskOutput::Reflection(r) => serde_json::to_string(r),
        TaskOutput::Answer(a) => serde_json::to_string(&serde_json::json!({
            "answer": a.text,
            "citations": a.citations,
        })),
        TaskOutput::Judgement(l) => serde_json::to_string(l),
    }
    .expect("task output serializes")
}

/// Parse the inner content object for a task kind.
pub fn parse_content(kind: TaskKind, content: &str) -> Result<TaskOutput, String> {
    let fail = |e: serde_json::Error| format!("content does not match the {kind:?} schema: {e}");
    match kind {
        TaskKind::ClassifyFeedback => {
            let body: crate::pipeline::ActionabilityResult =
                serde_json::from_str(content).map_err(fail)?;
            if body.kb_candidate && body.article.is_none() {
                return Err("kb_candidate without an article".to_string());
            }
            Ok(TaskOutput::Classification(body))
        }
        TaskKind::ExtractNugget => {
            let body: ExtractionBody = serde_json::from_str(content).map_err(fail)?;
            Ok(TaskOutput::Extraction(body.article))
        }
        TaskKind::GenerateAnchors => {
            let body: AnchorsBody = serde_json::from_str(content).map_err(fail)?;
            Ok(TaskOutput::Anchors(body.anchors))
        }
        TaskKind::Paraphrase => {
            let body: ParaphrasesBody = serde_json::from_str(content).map_err(fail)?;
            Ok(TaskOutput::Paraphrases(body.paraphrases))
        }
        TaskKind::Reflect => {
            let body: crate::provider::ReflectionOutput =
                serde_json::from_str(content).map_err(fail)?;
            Ok(TaskOutput::Reflection(body))
        }
        TaskKind::GenerateAnswer => {
            let body: AnswerBody = serde_json::from_str(content).map_err(fail)?;
            Ok(TaskOutput::Answer(crate::provider::GeneratedAnswer {
                text: body.answer,
                citations: body.citations,
            }))
        }
        TaskKind::Judge => {
            let body: crate::eval::JudgeLabels = serde_json::from_str(content).map_err(fail)?;
            Ok(TaskOutput::Judgement(body))
        }
    }
}
