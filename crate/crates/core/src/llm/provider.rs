use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const API_KEY_VAR: &str = "FEATLOOM_API_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("replay transcript exhausted after {consumed} responses")]
    Exhausted { consumed: usize },
    #[error("cannot read replay transcript: {0}")]
    Transcript(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned HTTP {0}")]
    Status(u16),
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Which pipeline step issued the call, for the audit log.
    pub purpose: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub trait GenerationProvider: Send {
    fn identity(&self) -> String;
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

#[derive(Serialize, Deserialize)]
struct ReplayLine {
    response: String,
}

/// Writes responses in the format [`ReplayProvider::from_file`] reads.
pub fn write_replay_file(path: &Path, responses: &[String]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in responses {
        out.push_str(&serde_json::to_string(&ReplayLine { response: r.clone() }).expect("string serializes"));
        out.push('\n');
    }
    fs::write(path, out)
}

/// Serves pre-recorded responses in order, ignoring the request.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayProvider {
    responses: Vec<String>,
    cursor: usize,
}

impl ReplayProvider {
    pub fn new(responses: Vec<String>) -> Self {
        Self { responses, cursor: 0 }
    }

    /// NDJSON, one `{"response": "..."}` per non-blank line.
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path).map_err(|e| ProviderError::Transcript(format!("{}: {e}", path.display())))?;
        let mut responses = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ReplayLine = serde_json::from_str(line)
                .map_err(|e| ProviderError::Transcript(format!("{} line {}: {e}", path.display(), n + 1)))?;
            responses.push(r.response);
        }
        Ok(Self::new(responses))
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn seek(&mut self, cursor: usize) {
        self.cursor = cursor.min(self.responses.len());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn next_response(&mut self) -> Result<String, ProviderError> {
        let r = self
            .responses
            .get(self.cursor)
            .cloned()
            .ok_or(ProviderError::Exhausted { consumed: self.cursor })?;
        self.cursor += 1;
        Ok(r)
    }
}

impl GenerationProvider for ReplayProvider {
    fn identity(&self) -> String {
        "replay".into()
    }

    fn complete(&mut self, _request: &CompletionRequest) -> Result<String, ProviderError> {
        self.next_response()
    }
}

/// Chat-completions style HTTP provider.
pub struct RemoteProvider {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
    backoff: Duration,
}

impl RemoteProvider {
    /// Reads the bearer token from `FEATLOOM_API_KEY`.
    pub fn from_env(endpoint: &str, model: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let api_key = std::env::var(API_KEY_VAR).map_err(|_| ProviderError::Config(format!("{API_KEY_VAR} is not set")))?;
        Ok(Self::new(endpoint, model, &api_key, timeout))
    }

    pub fn new(endpoint: &str, model: &str, api_key: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key: api_key.to_string(),
            agent: ureq::Agent::new_with_config(config),
            backoff: Duration::from_millis(500),
        }
    }

    fn attempt(&self, body: &Value) -> Result<String, (ProviderError, bool)> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| (ProviderError::Transport(e.to_string()), true))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let transient = status == 429 || status >= 500;
            return Err((ProviderError::Status(status), transient));
        }
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| (ProviderError::Malformed(e.to_string()), false))?;
        extract_content(&v).map_err(|e| (e, false))
    }
}

pub fn extract_content(v: &Value) -> Result<String, ProviderError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Malformed("no choices[0].message.content".into()))
}

impl GenerationProvider for RemoteProvider {
    fn identity(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn complete(&mut self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        match self.attempt(&body) {
            Ok(text) => Ok(text),
            Err((_, true)) => {
                thread::sleep(self.backoff);
                self.attempt(&body).map_err(|(e, _)| e)
            }
            Err((e, false)) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub provider: String,
    pub template_version: u32,
    pub request: CompletionRequest,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Wraps a provider and records every exchange.
pub struct Gateway {
    provider: Box<dyn GenerationProvider>,
    log: Vec<TranscriptEntry>,
}

impl Gateway {
    pub fn new(provider: Box<dyn GenerationProvider>) -> Self {
        Self { provider, log: Vec::new() }
    }

    pub fn complete(&mut self, request: CompletionRequest) -> Result<String, ProviderError> {
        let result = self.provider.complete(&request);
        self.log.push(TranscriptEntry {
            seq: self.log.len(),
            provider: self.provider.identity(),
            template_version: super::prompts::TEMPLATE_VERSION,
            request,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result
    }

    pub fn log(&self) -> &[TranscriptEntry] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<TranscriptEntry> {
        std::mem::take(&mut self.log)
    }
}
