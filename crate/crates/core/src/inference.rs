//! Model backends and the task runner.
//!
//! Requests use the common chat-completion JSON protocol:
//!
//! ```text
//! chat:       POST {endpoint}  {"model", "messages": [{"role": "user", "content": prompt}], "temperature", "max_tokens"}
//!             -> {"choices": [{"message": {"content": ...}}]}
//! completion: POST {endpoint}  {"model", "prompt": "Human:\n{prompt}\nAssistant:\n", "temperature", "max_tokens"}
//!             -> {"choices": [{"text": ...}]}
//! ```
//!
//! Gold outputs never leave the process: only the rendered prompt is sent.

use std::collections::HashMap;
use std::net::ToSocketAddrs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::instructions::{render_prompt, InstructionRecord, TaskId};
use crate::provenance::Provenance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Chat,
    Completion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (1-based `attempt`).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(16);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor))
    }
}

/// Backend settings. The auth token itself is never stored: only the name
/// of the environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    pub mode: Mode,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    pub auth_token_env: Option<String>,
}

pub const MAX_PARALLELISM: usize = 64;

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".to_string(),
            model: "default".to_string(),
            mode: Mode::Chat,
            temperature: 0.0,
            max_output_tokens: 256,
            parallelism: 4,
            retry: RetryPolicy::default(),
            timeout_secs: 60,
            auth_token_env: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(InferenceError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.parallelism == 0 || self.parallelism > MAX_PARALLELISM {
            return Err(InferenceError::Config(format!(
                "parallelism must be in 1..={MAX_PARALLELISM}, got {}",
                self.parallelism
            )));
        }
        if self.retry.max_attempts == 0 {
            return Err(InferenceError::Config("retry.max_attempts must be >= 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Timeouts, connection failures, HTTP 429 and 5xx.
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("endpoint unresolvable: {0}")]
    Unresolvable(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("no records to run")]
    Empty,
    #[error("aborting before any request: {0}")]
    Preflight(BackendError),
}

/// Something that answers a prompt. `send` is a single attempt; retries
/// are handled by [`call_with_retry`].
pub trait Backend: Sync {
    fn name(&self) -> String;

    fn preflight(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn send(&self, prompt: &str) -> Result<String, BackendError>;
}

pub fn wrap_completion_prompt(prompt: &str) -> String {
    format!("Human:\n{prompt}\nAssistant:\n")
}

pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, InferenceError> {
        config.validate()?;
        let token = match &config.auth_token_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| InferenceError::Config(format!("auth token variable `{var}` is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build();
        Ok(HttpBackend { config, agent, token })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// The JSON body for one prompt.
    pub fn request_body(&self, prompt: &str) -> Value {
        request_body(&self.config, prompt)
    }
}

pub fn request_body(config: &BackendConfig, prompt: &str) -> Value {
    match config.mode {
        Mode::Chat => json!({
            "model": config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        }),
        Mode::Completion => json!({
            "model": config.model,
            "prompt": wrap_completion_prompt(prompt),
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        }),
    }
}

/// Pulls the generated text out of a response body.
pub fn extract_content(mode: Mode, body: &Value) -> Result<String, BackendError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Malformed(format!("no choices in {body}")))?;
    let content = match mode {
        Mode::Chat => choice.get("message").and_then(|m| m.get("content")),
        Mode::Completion => choice.get("text"),
    };
    match content {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) => Ok(String::new()),
        _ => Err(BackendError::Malformed(format!("no content in choice {choice}"))),
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> String {
        self.config.model.clone()
    }

    fn preflight(&self) -> Result<(), BackendError> {
        let url = url::Url::parse(&self.config.endpoint)
            .map_err(|e| BackendError::Unresolvable(format!("{}: {e}", self.config.endpoint)))?;
        let host = url
            .host_str()
            .ok_or_else(|| BackendError::Unresolvable(format!("{}: no host", self.config.endpoint)))?;
        let port = url.port_or_known_default().unwrap_or(80);
        let resolved = (host, port)
            .to_socket_addrs()
            .map_err(|e| BackendError::Unresolvable(format!("{host}: {e}")))?;
        if resolved.count() == 0 {
            return Err(BackendError::Unresolvable(format!("{host}: no addresses")));
        }
        Ok(())
    }

    fn send(&self, prompt: &str) -> Result<String, BackendError> {
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        match request.send_json(self.request_body(prompt)) {
            Ok(response) => {
                let body: Value = response
                    .into_json()
                    .map_err(|e| BackendError::Malformed(format!("invalid JSON: {e}")))?;
                extract_content(self.config.mode, &body)
            }
            Err(ureq::Error::Status(status, response)) => {
                let body = response.into_string().unwrap_or_default();
                if status == 429 || status >= 500 {
                    Err(BackendError::Transient(format!("HTTP {status}: {body}")))
                } else {
                    Err(BackendError::Rejected { status, body })
                }
            }
            Err(ureq::Error::Transport(t)) => Err(BackendError::Transient(t.to_string())),
        }
    }
}

/// Answers each prompt with the gold output of the record that produced it.
pub struct EchoBackend {
    answers: HashMap<String, String>,
}

impl EchoBackend {
    pub fn from_records(records: &[InstructionRecord]) -> Self {
        let mut answers = HashMap::with_capacity(records.len());
        for r in records {
            answers.entry(render_prompt(r)).or_insert_with(|| r.gold_output.clone());
        }
        EchoBackend { answers }
    }
}

impl Backend for EchoBackend {
    fn name(&self) -> String {
        "mock-echo".to_string()
    }

    fn send(&self, prompt: &str) -> Result<String, BackendError> {
        self.answers.get(prompt).cloned().ok_or_else(|| BackendError::Rejected {
            status: 404,
            body: "unknown prompt".to_string(),
        })
    }
}

/// Returns the same text for every prompt.
pub struct ConstantBackend {
    pub reply: String,
}

impl Backend for ConstantBackend {
    fn name(&self) -> String {
        "mock-constant".to_string()
    }

    fn send(&self, _prompt: &str) -> Result<String, BackendError> {
        Ok(self.reply.clone())
    }
}

/// Backend driven by a closure; handy for scripted failure sequences.
pub struct FnBackend<F> {
    pub name: String,
    pub f: F,
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn send(&self, prompt: &str) -> Result<String, BackendError> {
        (self.f)(prompt)
    }
}

#[derive(Debug, Clone)]
pub struct Attempted {
    pub result: Result<String, BackendError>,
    pub attempts: u32,
    pub latency: Duration,
}

/// Sends `prompt`, retrying transient failures with exponential backoff.
pub fn call_with_retry(backend: &dyn Backend, prompt: &str, retry: &RetryPolicy) -> Attempted {
    let start = Instant::now();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let result = backend.send(prompt);
        match &result {
            Err(e) if e.is_transient() && attempts < retry.max_attempts => {
                log::debug!("attempt {attempts} failed ({e}); backing off");
                std::thread::sleep(retry.backoff(attempts));
            }
            _ => {
                return Attempted {
                    result,
                    attempts,
                    latency: start.elapsed(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSlot {
    pub index: usize,
    pub source_id: String,
    pub category: Option<crate::corpus::ConspiracyCategory>,
    pub response: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub failed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_name: String,
    pub task: TaskId,
    /// Path or identifier of the dataset file that was run.
    pub dataset: String,
    pub dataset_hash: String,
    pub backend: BackendConfig,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub provenance: Option<Provenance>,
    pub responses: Vec<ResponseSlot>,
}

impl RunManifest {
    pub fn failures(&self) -> usize {
        self.responses.iter().filter(|r| r.failed).count()
    }
}

/// Runs every record through `backend` with a pool of
/// `config.parallelism` workers. Responses land in input order.
pub fn run_task(
    records: &[InstructionRecord],
    backend: &dyn Backend,
    config: &BackendConfig,
) -> Result<RunManifest, InferenceError> {
    config.validate()?;
    let task = records.first().ok_or(InferenceError::Empty)?.task;
    backend.preflight().map_err(InferenceError::Preflight)?;

    let started_at = Utc::now();
    let slots: Vec<Mutex<Option<ResponseSlot>>> = records.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.parallelism.min(records.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                let Some(record) = records.get(index) else { break };
                let attempted = call_with_retry(backend, &render_prompt(record), &config.retry);
                let (response, failed, error) = match attempted.result {
                    Ok(text) => (text, false, None),
                    Err(e) => {
                        log::warn!("record {} ({}) failed: {e}", index, record.source_id);
                        (String::new(), true, Some(e.to_string()))
                    }
                };
                *slots[index].lock().unwrap() = Some(ResponseSlot {
                    index,
                    source_id: record.source_id.clone(),
                    category: record.category,
                    response,
                    latency_ms: attempted.latency.as_millis() as u64,
                    attempts: attempted.attempts,
                    failed,
                    error,
                });
            });
        }
    });
    let responses = slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot filled"))
        .collect();
    Ok(RunManifest {
        run_name: backend.name(),
        task,
        dataset: String::new(),
        dataset_hash: crate::instructions::dataset_hash(records),
        backend: config.clone(),
        started_at,
        finished_at: Utc::now(),
        provenance: None,
        responses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CategoryLabels, CocoRecord, IntentionLabel};
    use crate::instructions::{build_task_dataset, TaskInput};
    use std::sync::atomic::AtomicU32;

    fn fast_config(parallelism: usize) -> BackendConfig {
        BackendConfig {
            parallelism,
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff_ms: 1,
            },
            ..BackendConfig::default()
        }
    }

    fn records(n: usize) -> Vec<InstructionRecord> {
        let coco: Vec<CocoRecord> = (0..n)
            .map(|i| {
                let label = IntentionLabel::from_code((i % 3) as u8).unwrap();
                CocoRecord::new(
                    format!("t{i}"),
                    format!("tweet number {i}"),
                    CategoryLabels::uniform(IntentionLabel::Unrelated)
                        .with(crate::corpus::ConspiracyCategory::FakeVirus, label),
                )
            })
            .collect();
        build_task_dataset(TaskId::Intention, TaskInput::Coco(&coco), None).unwrap()
    }

    #[test]
    fn echo_preserves_order_under_parallelism() {
        let recs = records(100);
        let backend = EchoBackend::from_records(&recs);
        let manifest = run_task(&recs, &backend, &fast_config(8)).unwrap();
        assert_eq!(manifest.responses.len(), 100);
        for (r, slot) in recs.iter().zip(&manifest.responses) {
            assert_eq!(slot.response, r.gold_output);
            assert_eq!(slot.source_id, r.source_id);
            assert_eq!(slot.attempts, 1);
        }
    }

    #[test]
    fn transient_errors_are_retried() {
        let recs = records(1);
        let calls = AtomicU32::new(0);
        let backend = FnBackend {
            name: "flaky".to_string(),
            f: |_: &str| {
                if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err(BackendError::Transient("HTTP 429".to_string()))
                } else {
                    Ok("0. Unrelated".to_string())
                }
            },
        };
        let manifest = run_task(&recs, &backend, &fast_config(1)).unwrap();
        assert_eq!(manifest.responses[0].attempts, 3);
        assert_eq!(manifest.responses[0].response, "0. Unrelated");
        assert!(!manifest.responses[0].failed);
    }

    #[test]
    fn exhausted_retries_record_failure() {
        let recs = records(2);
        let backend = FnBackend {
            name: "down".to_string(),
            f: |_: &str| Err(BackendError::Transient("HTTP 503".to_string())),
        };
        let manifest = run_task(&recs, &backend, &fast_config(2)).unwrap();
        assert!(manifest
            .responses
            .iter()
            .all(|r| r.failed && r.attempts == 3 && r.response.is_empty()));
    }

    #[test]
    fn rejections_are_not_retried() {
        let recs = records(3);
        let backend = FnBackend {
            name: "strict".to_string(),
            f: |_: &str| {
                Err(BackendError::Rejected {
                    status: 400,
                    body: "bad".into(),
                })
            },
        };
        let manifest = run_task(&recs, &backend, &fast_config(1)).unwrap();
        assert_eq!(manifest.failures(), 3);
        assert!(manifest.responses.iter().all(|r| r.attempts == 1));
    }

    #[test]
    fn unresolvable_endpoint_aborts_before_requests() {
        let config = BackendConfig {
            endpoint: "http://no-such-host.invalid/v1/chat/completions".to_string(),
            ..fast_config(1)
        };
        let backend = HttpBackend::new(config.clone()).unwrap();
        let err = run_task(&records(2), &backend, &config).unwrap_err();
        assert!(matches!(err, InferenceError::Preflight(BackendError::Unresolvable(_))));
    }

    #[test]
    fn request_bodies() {
        let mut config = BackendConfig::default();
        let body = request_body(&config, "P");
        assert_eq!(body["messages"][0]["content"], "P");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["temperature"], 0.0);
        config.mode = Mode::Completion;
        let body = request_body(&config, "P");
        assert_eq!(body["prompt"], "Human:\nP\nAssistant:\n");
    }

    #[test]
    fn content_extraction() {
        let chat = json!({"choices": [{"message": {"role": "assistant", "content": "1. conspiracy"}}]});
        assert_eq!(extract_content(Mode::Chat, &chat).unwrap(), "1. conspiracy");
        let completion = json!({"choices": [{"text": "0. non-conspiracy"}]});
        assert_eq!(
            extract_content(Mode::Completion, &completion).unwrap(),
            "0. non-conspiracy"
        );
        assert!(extract_content(Mode::Chat, &json!({"error": "x"})).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(fast_config(0).validate().is_err());
        let mut c = fast_config(1);
        c.temperature = -1.0;
        assert!(c.validate().is_err());
    }
}
