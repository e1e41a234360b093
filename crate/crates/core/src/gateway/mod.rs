//! Provider-agnostic completion calls with record/replay and cost accounting.
//!
//! Every request has a stable SHA-256 digest over its model identity,
//! reasoning options, decoding options and prompt texts (prices excluded).
//! In replay mode responses come only from the fixture store; a miss is an
//! error, never a live fallback. Record mode calls the provider and persists
//! the response under the digest. Live mode calls the provider only.

mod http;
mod ledger;
mod payload;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use http::{build_chat_body, parse_chat_response, classify_status, ProviderConfig};
#[cfg(feature = "http")]
pub use http::OpenAiCompatible;
pub use ledger::{record_cost, CallRecord, CostLedger, IterationCost, PriceEntry, PriceTable};
pub use payload::{extract_payload, PayloadError};
pub use store::{Fixture, FixtureStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gpt,
    Gemini,
    DeepSeek,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub family: Family,
    pub model_id: String,
    /// Vendor-specific knobs such as `reasoning_effort`, passed through.
    #[serde(default)]
    pub reasoning_options: BTreeMap<String, Value>,
    /// Currency per 1M input tokens.
    #[serde(default)]
    pub price_in: f64,
    /// Currency per 1M output tokens.
    #[serde(default)]
    pub price_out: f64,
}

impl ModelSpec {
    pub fn new(family: Family, model_id: impl Into<String>) -> Self {
        ModelSpec {
            family,
            model_id: model_id.into(),
            reasoning_options: BTreeMap::new(),
            price_in: 0.0,
            price_out: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidModel("model_id is empty".into()));
        }
        if !(self.price_in >= 0.0 && self.price_out >= 0.0) {
            return Err(GatewayError::InvalidModel(format!(
                "negative price for {}",
                self.model_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: ModelSpec,
    pub system_text: String,
    pub user_text: String,
    /// Opaque decoding options, passed through to the provider.
    #[serde(default)]
    pub decoding: BTreeMap<String, Value>,
}

#[derive(Serialize)]
struct HashedRequest<'a> {
    family: Family,
    model_id: &'a str,
    reasoning_options: &'a BTreeMap<String, Value>,
    decoding: &'a BTreeMap<String, Value>,
    system_text: &'a str,
    user_text: &'a str,
}

impl CompletionRequest {
    pub fn new(model: ModelSpec, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        CompletionRequest {
            model,
            system_text: system_text.into(),
            user_text: user_text.into(),
            decoding: BTreeMap::new(),
        }
    }

    /// Hex SHA-256 of the canonical request encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&HashedRequest {
            family: self.model.family,
            model_id: &self.model.model_id,
            reasoning_options: &self.model.reasoning_options,
            decoding: &self.decoding,
            system_text: &self.system_text,
            user_text: &self.user_text,
        })
        .expect("request encoding cannot fail");
        let mut h = Sha256::new();
        h.update(b"guidemod-request-v1\n");
        h.update(canonical.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    Transport,
    RateLimited,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct ProviderError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ProviderError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ProviderError {
            kind,
            message: message.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self.kind, ErrorKind::Transport | ErrorKind::RateLimited)
    }
}

/// A vendor completion endpoint.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError>;
}

/// Provider backed by a closure; used for scripted sessions and tests.
pub struct FnProvider<F>(pub F);

impl<F> Provider for FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<CompletionResponse, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (self.0)(request)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("fixture missing for request {hash} (replay mode never falls back to a live call)")]
    FixtureMissing { hash: String },
    #[error("provider failed after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
    Transport { attempts: Vec<String> },
    #[error("fixture store: {0}")]
    Store(String),
    #[error("{0:?} mode needs a configured provider")]
    NoProvider(Mode),
    #[error("invalid model spec: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Replay,
    Record,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 1_000,
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms as f64 * self.factor.powi(attempt as i32);
        Duration::from_millis(ms as u64)
    }
}

/// Pipeline stage that issued a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Annotate,
    ExplainPattern,
    GeneratePrinciple,
    RefineGuideline,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Annotate => "annotate",
            Stage::ExplainPattern => "explain_pattern",
            Stage::GeneratePrinciple => "generate_principle",
            Stage::RefineGuideline => "refine_guideline",
        })
    }
}

/// Where a call belongs in the cost ledger.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallTag {
    /// 1-based iteration number in the ledger.
    pub iteration: u32,
    pub stage: Stage,
    /// Document id for annotation calls, empty otherwise.
    pub item: String,
    /// 0 for the first ask, 1 for a re-ask.
    pub attempt: u32,
}

impl CallTag {
    pub fn new(iteration: u32, stage: Stage) -> Self {
        CallTag {
            iteration,
            stage,
            item: String::new(),
            attempt: 0,
        }
    }

    pub fn item(mut self, item: impl Into<String>) -> Self {
        self.item = item.into();
        self
    }

    pub fn attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }
}

pub struct Gateway {
    mode: Mode,
    store: Option<FixtureStore>,
    provider: Option<Arc<dyn Provider>>,
    retry: RetryPolicy,
    ledger: Mutex<CostLedger>,
    parallelism: usize,
}

impl Gateway {
    pub fn new(mode: Mode, store: Option<FixtureStore>, provider: Option<Arc<dyn Provider>>) -> Self {
        Gateway {
            mode,
            store,
            provider,
            retry: RetryPolicy::default(),
            ledger: Mutex::new(CostLedger::default()),
            parallelism: 1,
        }
    }

    pub fn replay(store: FixtureStore) -> Self {
        Self::new(Mode::Replay, Some(store), None)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Upper bound on concurrent calls.
    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn complete(&self, request: &CompletionRequest, tag: &CallTag) -> Result<CompletionResponse, GatewayError> {
        let hash = request.hash();
        let response = match self.mode {
            Mode::Replay => {
                let store = self.store.as_ref().ok_or(GatewayError::NoProvider(Mode::Replay))?;
                store
                    .get(&hash)
                    .map_err(GatewayError::Store)?
                    .ok_or_else(|| GatewayError::FixtureMissing { hash: hash.clone() })?
                    .response
            }
            Mode::Record => {
                let response = self.call_with_retries(request)?;
                let store = self.store.as_ref().ok_or(GatewayError::NoProvider(Mode::Record))?;
                store.put(request, &response).map_err(GatewayError::Store)?;
                response
            }
            Mode::Live => self.call_with_retries(request)?,
        };
        self.ledger
            .lock()
            .expect("ledger lock poisoned")
            .record_call(tag, &hash, &request.model, &response);
        Ok(response)
    }

    fn call_with_retries(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let provider = self.provider.as_ref().ok_or(GatewayError::NoProvider(self.mode))?;
        let mut attempts = Vec::new();
        for attempt in 0..self.retry.max_attempts.max(1) {
            match provider.complete(request) {
                Ok(resp) => return Ok(resp),
                Err(err) => {
                    let retry = err.is_retryable() && attempt + 1 < self.retry.max_attempts;
                    log::warn!("attempt {} for {}: {err}", attempt + 1, request.model.model_id);
                    attempts.push(err.to_string());
                    if !retry {
                        break;
                    }
                    std::thread::sleep(self.retry.delay(attempt));
                }
            }
        }
        Err(GatewayError::Transport { attempts })
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().expect("ledger lock poisoned").clone()
    }

    pub fn with_ledger<R>(&self, f: impl FnOnce(&mut CostLedger) -> R) -> R {
        f(&mut self.ledger.lock().expect("ledger lock poisoned"))
    }
}
