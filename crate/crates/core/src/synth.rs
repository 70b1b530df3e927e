//! CoT-synthesis request construction and dispatch.
//!
//! Requests pair the fixed system template with a user message carrying the
//! database prompt, the question, any external knowledge, and the gold SQL
//! as a reference solution. Dispatch goes to a pluggable chat-completions
//! endpoint; a deterministic in-process stub ships for tests and offline
//! runs. Request construction is pure; the network call is the only
//! effectful step.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{schema_prompt, DatasetItem, SchemaCatalog};
use crate::executor::{ExecConfig, ExecError, Executor, Verdict};
use crate::rollouts::extract_sql;

/// System message sent with every synthesis request. The final fenced
/// example is load-bearing: it tells the sampler to emit SQL in a tagged
/// code block that the extraction regex can find.
pub const SYNTHESIS_SYSTEM_MESSAGE: &str = "\
You are a senior data analyst who expertise at structural query language (SQL). \
Given a question made by front end employees and targeted database schema, you are asked \
to translate that question into SQLite query with detailed explanation.

Additionally, the input will be accompanied with a reference solution from your colleagues, \
which may or may not be correct. This extra information intents to help you to formulate \
your answer, and you are asked not to mention reference solution in any form.

To facilitate SQL extraction with regular expression, the SQL in your answer should be \
expressed in a Markdown code block with proper highlight. For example,
``` SQL
    SELECT * FROM database;
```";

pub const DEFAULT_COMPLETIONS: usize = 16;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_TOP_K: u32 = 32;

/// Environment variables the HTTP endpoint reads.
pub const ENV_COMPLETIONS_URL: &str = "SQLPREF_COMPLETIONS_URL";
pub const ENV_COMPLETIONS_KEY: &str = "SQLPREF_COMPLETIONS_KEY";

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("catalog is for database `{catalog_db}` but item {item_id} uses `{item_db}`")]
    CatalogMismatch {
        item_id: String,
        item_db: String,
        catalog_db: String,
    },
    #[error("endpoint failed for item {item_id} after {attempts} attempts: {message}")]
    EndpointError {
        item_id: String,
        attempts: u32,
        message: String,
    },
    #[error("endpoint returned an empty completion for item {item_id}")]
    EmptyCompletion { item_id: String },
}

/// Sampling parameters forwarded to the endpoint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_k: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            top_k: DEFAULT_TOP_K,
        }
    }
}

/// One synthesis call: system template, composed user message, and sampling
/// controls.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthesisRequest {
    pub item_id: String,
    pub system_message: String,
    pub user_message: String,
    pub k: usize,
    pub temperature: f64,
    pub top_k: u32,
}

/// Builds the request for one item. Sections of the user message appear in
/// fixed order: database prompt, question, external knowledge (omitted when
/// empty), reference solution. Identical inputs produce byte-identical
/// requests.
pub fn build_request(
    item: &DatasetItem,
    catalog: &SchemaCatalog,
    k: usize,
    sampling: SamplingParams,
) -> Result<SynthesisRequest, SynthError> {
    if !catalog.db_id.eq_ignore_ascii_case(&item.db_id) {
        return Err(SynthError::CatalogMismatch {
            item_id: item.item_id.clone(),
            item_db: item.db_id.clone(),
            catalog_db: catalog.db_id.clone(),
        });
    }
    let mut user_message = format!("Database Prompt: {}\n", schema_prompt(catalog));
    user_message.push_str(&format!("Question: {}\n", item.question));
    if !item.evidence.trim().is_empty() {
        user_message.push_str(&format!("External Knowledge: {}\n", item.evidence));
    }
    user_message.push_str(&format!("Reference Solution: {}", item.gold_sql));
    Ok(SynthesisRequest {
        item_id: item.item_id.clone(),
        system_message: SYNTHESIS_SYSTEM_MESSAGE.to_string(),
        user_message,
        k: k.max(1),
        temperature: sampling.temperature,
        top_k: sampling.top_k,
    })
}

/// Chat-completions transport. Implementations return `k` completion texts
/// for a request.
pub trait CompletionsEndpoint: Send + Sync {
    fn complete(&self, request: &SynthesisRequest) -> Result<Vec<String>, String>;
}

/// Minimal HTTP JSON chat-completions client. Body:
/// `{model, messages, n, temperature, top_k}`; response:
/// `{choices: [{message: {content}}]}`. Base URL and credential come from
/// `SQLPREF_COMPLETIONS_URL` / `SQLPREF_COMPLETIONS_KEY` unless given.
pub struct HttpEndpoint {
    url: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key,
            model: model.into(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    /// Reads the connection details from the environment; `None` when the
    /// URL variable is unset.
    pub fn from_env(model: impl Into<String>) -> Option<Self> {
        let url = std::env::var(ENV_COMPLETIONS_URL).ok()?;
        let api_key = std::env::var(ENV_COMPLETIONS_KEY).ok();
        Some(Self::new(url, api_key, model))
    }
}

impl CompletionsEndpoint for HttpEndpoint {
    fn complete(&self, request: &SynthesisRequest) -> Result<Vec<String>, String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_message},
                {"role": "user", "content": request.user_message},
            ],
            "n": request.k,
            "temperature": request.temperature,
            "top_k": request.top_k,
        });
        let mut http_request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            http_request = http_request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = http_request
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let parsed: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| format!("malformed endpoint response: {e}"))?;
        let choices = parsed
            .get("choices")
            .and_then(|c| c.as_array())
            .ok_or_else(|| "endpoint response has no choices".to_string())?;
        choices
            .iter()
            .map(|choice| {
                choice
                    .pointer("/message/content")
                    .and_then(|c| c.as_str())
                    .map(|s| s.to_string())
                    .ok_or_else(|| "choice has no message content".to_string())
            })
            .collect()
    }
}

/// Deterministic in-process endpoint. Canned completions win when present;
/// otherwise each request yields `k` copies of a short derivation restating
/// the reference solution from the user message in a tagged block.
#[derive(Debug, Default)]
pub struct StubEndpoint {
    canned: BTreeMap<String, Vec<String>>,
}

impl StubEndpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_canned(mut self, item_id: impl Into<String>, completions: Vec<String>) -> Self {
        self.canned.insert(item_id.into(), completions);
        self
    }

    fn echo_completion(request: &SynthesisRequest) -> String {
        let reference = request
            .user_message
            .lines()
            .rev()
            .find_map(|line| line.strip_prefix("Reference Solution: "))
            .unwrap_or("SELECT 1");
        format!(
            "Let's work through the schema step by step and translate the question.\n\
             The filter and join structure follow directly from the question.\n\
             ```sql\n{reference}\n```"
        )
    }
}

impl CompletionsEndpoint for StubEndpoint {
    fn complete(&self, request: &SynthesisRequest) -> Result<Vec<String>, String> {
        if let Some(canned) = self.canned.get(&request.item_id) {
            return Ok(canned.clone());
        }
        Ok(vec![Self::echo_completion(request); request.k])
    }
}

/// Completions of one item, in request order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthesisResult {
    pub item_id: String,
    pub completions: Vec<String>,
}

/// Dispatch controls: in-flight bound and the retry/backoff schedule.
#[derive(Debug, Clone)]
pub struct DispatchOptions {
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            max_attempts: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

/// Sends every request with bounded concurrency and reassembles responses in
/// request order. A request is retried with doubling backoff up to
/// `max_attempts`; exhausted retries and empty completions are errors.
pub fn synthesize(
    requests: &[SynthesisRequest],
    endpoint: &dyn CompletionsEndpoint,
    options: &DispatchOptions,
) -> Result<Vec<SynthesisResult>, SynthError> {
    let workers = options.max_in_flight.max(1).min(requests.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SynthesisResult, SynthError>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= requests.len() {
                    break;
                }
                let request = &requests[index];
                let result = dispatch_one(request, endpoint, options);
                slots.lock().unwrap()[index] = Some(result);
            });
        }
    });

    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every request slot is filled"))
        .collect()
}

fn dispatch_one(
    request: &SynthesisRequest,
    endpoint: &dyn CompletionsEndpoint,
    options: &DispatchOptions,
) -> Result<SynthesisResult, SynthError> {
    let mut last_error = String::new();
    for attempt in 0..options.max_attempts {
        if attempt > 0 {
            std::thread::sleep(options.backoff * 2u32.pow(attempt - 1));
        }
        match endpoint.complete(request) {
            Ok(completions) => {
                if completions.is_empty() || completions.iter().any(|c| c.trim().is_empty()) {
                    return Err(SynthError::EmptyCompletion {
                        item_id: request.item_id.clone(),
                    });
                }
                return Ok(SynthesisResult {
                    item_id: request.item_id.clone(),
                    completions,
                });
            }
            Err(message) => last_error = message,
        }
    }
    Err(SynthError::EndpointError {
        item_id: request.item_id.clone(),
        attempts: options.max_attempts,
        message: last_error,
    })
}

/// Keeps only completions whose extracted SQL judges CORRECT against the
/// item's gold query. Unextractable completions drop out. Never grows the
/// set and is idempotent.
pub fn verify_synth(
    item: &DatasetItem,
    completions: &[String],
    executor: &Executor,
    cfg: &ExecConfig,
) -> Result<Vec<String>, ExecError> {
    let mut kept = Vec::new();
    for completion in completions {
        let Some(sql) = extract_sql(completion) else {
            continue;
        };
        if executor.ex_verdict(item, &sql, cfg)? == Verdict::Correct {
            kept.push(completion.clone());
        }
    }
    Ok(kept)
}
