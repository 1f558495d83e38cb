//! Uniform access to chat-completion and embedding backends.
//!
//! Every chat request is issued on behalf of exactly one [`ModelRole`] and
//! carries that role's [`SamplingParams`]. Two backends are provided: an
//! Ollama-compatible HTTP client ([`HttpBackend`]) and a scripted,
//! fully deterministic [`MockBackend`] for offline runs.

mod http;
mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use mock::{fnv1a64, mock_embedding, MockBackend, RecordedCall, DEFAULT_MOCK_DIM};

/// Default chat model served by the backend.
pub const DEFAULT_MODEL_NAME: &str = "llama3.1";
/// Default embedding model served by the backend.
pub const DEFAULT_EMBEDDING_MODEL_NAME: &str = "jina-embeddings-v2-base-de";
/// Seed used for every role unless configured otherwise.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {cause}")]
    Unavailable { attempts: u32, cause: String },
    #[error("backend returned an empty completion for role {0}")]
    EmptyResponse(ModelRole),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("invalid chat exchange: {0}")]
    InvalidExchange(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

/// The six model roles of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// Turns the task prompt and feedback into a step-by-step prompt.
    Prompting,
    /// Generates synthetic documents from the step-by-step prompt.
    Actor,
    /// Critiques samples that scored below the threshold.
    DiagnosticFeedback,
    /// Reinforces samples that scored at or above the threshold.
    GeneralFeedback,
    /// Condenses all feedback of a round.
    Summarizer,
    /// Rephrases a single sentence of a prompt.
    Mutator,
}

impl ModelRole {
    pub const ALL: [ModelRole; 6] = [
        ModelRole::Prompting,
        ModelRole::Actor,
        ModelRole::DiagnosticFeedback,
        ModelRole::GeneralFeedback,
        ModelRole::Summarizer,
        ModelRole::Mutator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Prompting => "prompting",
            ModelRole::Actor => "actor",
            ModelRole::DiagnosticFeedback => "diagnostic_feedback",
            ModelRole::GeneralFeedback => "general_feedback",
            ModelRole::Summarizer => "summarizer",
            ModelRole::Mutator => "mutator",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decoding parameters sent with a chat request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub seed: u64,
}

impl SamplingParams {
    pub const fn new(temperature: f64, top_k: u32, top_p: f64, seed: u64) -> Self {
        Self {
            temperature,
            top_k,
            top_p,
            seed,
        }
    }

    /// Published defaults for each role, all seeded with [`DEFAULT_SEED`].
    pub const fn default_for(role: ModelRole) -> Self {
        match role {
            ModelRole::Prompting => Self::new(0.5, 40, 0.85, DEFAULT_SEED),
            ModelRole::Actor => Self::new(0.8, 50, 0.9, DEFAULT_SEED),
            ModelRole::DiagnosticFeedback | ModelRole::GeneralFeedback => {
                Self::new(0.3, 5, 0.5, DEFAULT_SEED)
            }
            ModelRole::Summarizer => Self::new(0.2, 5, 0.5, DEFAULT_SEED),
            ModelRole::Mutator => Self::new(0.7, 20, 0.9, DEFAULT_SEED),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidConfig(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidConfig(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.top_k == 0 {
            return Err(GatewayError::InvalidConfig("top_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Total mapping from every [`ModelRole`] to its sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleParams {
    pub prompting: SamplingParams,
    pub actor: SamplingParams,
    pub diagnostic_feedback: SamplingParams,
    pub general_feedback: SamplingParams,
    pub summarizer: SamplingParams,
    pub mutator: SamplingParams,
}

impl Default for RoleParams {
    fn default() -> Self {
        Self::with_seed(DEFAULT_SEED)
    }
}

impl RoleParams {
    pub fn with_seed(seed: u64) -> Self {
        let p = |role| SamplingParams {
            seed,
            ..SamplingParams::default_for(role)
        };
        Self {
            prompting: p(ModelRole::Prompting),
            actor: p(ModelRole::Actor),
            diagnostic_feedback: p(ModelRole::DiagnosticFeedback),
            general_feedback: p(ModelRole::GeneralFeedback),
            summarizer: p(ModelRole::Summarizer),
            mutator: p(ModelRole::Mutator),
        }
    }

    pub fn get(&self, role: ModelRole) -> &SamplingParams {
        match role {
            ModelRole::Prompting => &self.prompting,
            ModelRole::Actor => &self.actor,
            ModelRole::DiagnosticFeedback => &self.diagnostic_feedback,
            ModelRole::GeneralFeedback => &self.general_feedback,
            ModelRole::Summarizer => &self.summarizer,
            ModelRole::Mutator => &self.mutator,
        }
    }

    pub fn get_mut(&mut self, role: ModelRole) -> &mut SamplingParams {
        match role {
            ModelRole::Prompting => &mut self.prompting,
            ModelRole::Actor => &mut self.actor,
            ModelRole::DiagnosticFeedback => &mut self.diagnostic_feedback,
            ModelRole::GeneralFeedback => &mut self.general_feedback,
            ModelRole::Summarizer => &mut self.summarizer,
            ModelRole::Mutator => &mut self.mutator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for role in ModelRole::ALL {
            self.get(role)
                .validate()
                .map_err(|e| GatewayError::InvalidConfig(format!("role {role}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Assistant,
            text: text.into(),
        }
    }
}

/// One chat request: role, system prompt and a conversation ending on a user turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    role: ModelRole,
    system_prompt: String,
    messages: Vec<ChatMessage>,
}

impl ChatExchange {
    pub fn new(
        role: ModelRole,
        system_prompt: impl Into<String>,
        messages: Vec<ChatMessage>,
    ) -> Result<Self> {
        match messages.last() {
            None => Err(GatewayError::InvalidExchange("no messages".into())),
            Some(m) if m.speaker != Speaker::User => Err(GatewayError::InvalidExchange(
                "last message must come from the user".into(),
            )),
            Some(_) => Ok(Self {
                role,
                system_prompt: system_prompt.into(),
                messages,
            }),
        }
    }

    /// Single user turn.
    pub fn single(
        role: ModelRole,
        system_prompt: impl Into<String>,
        user: impl Into<String>,
    ) -> Self {
        Self {
            role,
            system_prompt: system_prompt.into(),
            messages: vec![ChatMessage::user(user)],
        }
    }

    pub fn role(&self) -> ModelRole {
        self.role
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn last_user_message(&self) -> &str {
        // Non-empty and user-terminated by construction.
        &self.messages[self.messages.len() - 1].text
    }

    /// Every text of the exchange, system prompt first.
    pub fn full_text(&self) -> String {
        let mut out = self.system_prompt.clone();
        for m in &self.messages {
            out.push('\n');
            out.push_str(&m.text);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
        })
    }
}

fn default_model_name() -> String {
    DEFAULT_MODEL_NAME.to_string()
}

fn default_embedding_model_name() -> String {
    DEFAULT_EMBEDDING_MODEL_NAME.to_string()
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_max_retries() -> u32 {
    2
}

fn default_retry_backoff_ms() -> u64 {
    250
}

fn default_embedding_dim() -> usize {
    DEFAULT_MOCK_DIM
}

/// Which backend to talk to and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default = "default_model_name")]
    pub model_name: String,
    #[serde(default = "default_embedding_model_name")]
    pub embedding_model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Embedding dimension of the mock backend.
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    /// Per-role scripted replies of the mock backend.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scripts: BTreeMap<ModelRole, Vec<String>>,
}

impl BackendDescriptor {
    pub fn mock() -> Self {
        Self {
            kind: BackendKind::Mock,
            base_url: None,
            model_name: default_model_name(),
            embedding_model_name: default_embedding_model_name(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_retry_backoff_ms(),
            embedding_dim: default_embedding_dim(),
            scripts: BTreeMap::new(),
        }
    }

    pub fn http(base_url: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            base_url: Some(base_url.into()),
            ..Self::mock()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BackendKind::Http => {
                let url = self.base_url.as_deref().unwrap_or("").trim();
                if url.is_empty() {
                    return Err(GatewayError::InvalidConfig(
                        "backend.base_url is required for the http backend".into(),
                    ));
                }
                if !(url.starts_with("http://") || url.starts_with("https://")) {
                    return Err(GatewayError::InvalidConfig(format!(
                        "backend.base_url must be an http(s) URL, got {url:?}"
                    )));
                }
            }
            BackendKind::Mock => {
                if self.embedding_dim == 0 {
                    return Err(GatewayError::InvalidConfig(
                        "backend.embedding_dim must be >= 1".into(),
                    ));
                }
            }
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidConfig(
                "backend.model_name must not be empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HealthStatus {
    Ok,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthReport {
    pub status: HealthStatus,
    pub kind: BackendKind,
    pub model_name: String,
    pub embedding_model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    /// Models advertised by the server, when it lists them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub available_models: Vec<String>,
}

impl HealthReport {
    pub fn is_ok(&self) -> bool {
        self.status == HealthStatus::Ok
    }
}

/// A chat + embedding provider.
pub trait ModelBackend: Send + Sync {
    fn chat(&self, exchange: &ChatExchange, params: &SamplingParams) -> Result<String>;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn health_check(&self) -> HealthReport;

    fn descriptor(&self) -> &BackendDescriptor;
}

/// Shared handle on a backend that enforces the gateway contract on every call.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("descriptor", self.backend.descriptor())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self { backend }
    }

    pub fn from_backend(backend: impl ModelBackend + 'static) -> Self {
        Self::new(Arc::new(backend))
    }

    /// Builds the backend named by `descriptor`. A mock descriptor never
    /// produces a network client.
    pub fn from_descriptor(descriptor: &BackendDescriptor) -> Result<Self> {
        descriptor.validate()?;
        Ok(match descriptor.kind {
            BackendKind::Mock => Self::from_backend(MockBackend::from_descriptor(descriptor)),
            BackendKind::Http => Self::from_backend(HttpBackend::new(descriptor.clone())?),
        })
    }

    pub fn chat(&self, exchange: &ChatExchange, params: &SamplingParams) -> Result<String> {
        params.validate()?;
        let text = self.backend.chat(exchange, params)?;
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyResponse(exchange.role()));
        }
        Ok(text)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidExchange(
                "embed requires at least one text".into(),
            ));
        }
        let vectors = self.backend.embed(texts)?;
        if vectors.len() != texts.len() {
            return Err(GatewayError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(GatewayError::Protocol("empty embedding vector".into()));
        }
        if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
            return Err(GatewayError::Protocol(format!(
                "embedding {i} has dimension {} but the batch uses {dim}",
                v.len()
            )));
        }
        Ok(vectors)
    }

    pub fn health_check(&self) -> HealthReport {
        self.backend.health_check()
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        self.backend.descriptor()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_match_published_values() {
        let p = RoleParams::default();
        assert_eq!(p.prompting, SamplingParams::new(0.5, 40, 0.85, 42));
        assert_eq!(p.actor, SamplingParams::new(0.8, 50, 0.9, 42));
        assert_eq!(p.diagnostic_feedback, SamplingParams::new(0.3, 5, 0.5, 42));
        assert_eq!(p.general_feedback, SamplingParams::new(0.3, 5, 0.5, 42));
        assert_eq!(p.summarizer, SamplingParams::new(0.2, 5, 0.5, 42));
        assert_eq!(p.mutator, SamplingParams::new(0.7, 20, 0.9, 42));
        assert!(p.validate().is_ok());
    }

    #[test]
    fn sampling_params_bounds() {
        assert!(SamplingParams::new(0.0, 1, 1.0, 0).validate().is_ok());
        assert!(SamplingParams::new(-0.1, 1, 1.0, 0).validate().is_err());
        assert!(SamplingParams::new(0.5, 0, 1.0, 0).validate().is_err());
        assert!(SamplingParams::new(0.5, 1, 0.0, 0).validate().is_err());
        assert!(SamplingParams::new(0.5, 1, 1.01, 0).validate().is_err());
    }

    #[test]
    fn exchange_must_end_with_user() {
        assert!(ChatExchange::new(ModelRole::Actor, "s", vec![]).is_err());
        let err = ChatExchange::new(
            ModelRole::Actor,
            "s",
            vec![ChatMessage::user("a"), ChatMessage::assistant("b")],
        );
        assert!(matches!(err, Err(GatewayError::InvalidExchange(_))));
        let ok = ChatExchange::new(
            ModelRole::Actor,
            "s",
            vec![ChatMessage::assistant("b"), ChatMessage::user("a")],
        )
        .unwrap();
        assert_eq!(ok.last_user_message(), "a");
    }

    #[test]
    fn http_descriptor_needs_base_url() {
        let mut d = BackendDescriptor::http("");
        assert!(d.validate().is_err());
        d.base_url = None;
        assert!(d.validate().is_err());
        d.base_url = Some("http://localhost:11434".into());
        assert!(d.validate().is_ok());
    }

    #[test]
    fn gateway_rejects_empty_completion() {
        let mock = MockBackend::new(8).with_script(ModelRole::Summarizer, ["   "]);
        let gw = Gateway::from_backend(mock);
        let ex = ChatExchange::single(ModelRole::Summarizer, "sys", "hi");
        let err = gw
            .chat(&ex, &SamplingParams::default_for(ModelRole::Summarizer))
            .unwrap_err();
        assert!(matches!(
            err,
            GatewayError::EmptyResponse(ModelRole::Summarizer)
        ));
    }

    struct RaggedBackend(BackendDescriptor);

    impl ModelBackend for RaggedBackend {
        fn chat(&self, _: &ChatExchange, _: &SamplingParams) -> Result<String> {
            Ok("x".into())
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            Ok(texts
                .iter()
                .enumerate()
                .map(|(i, _)| vec![1.0; i + 1])
                .collect())
        }
        fn health_check(&self) -> HealthReport {
            unreachable!()
        }
        fn descriptor(&self) -> &BackendDescriptor {
            &self.0
        }
    }

    #[test]
    fn gateway_rejects_ragged_embedding_batch() {
        let gw = Gateway::from_backend(RaggedBackend(BackendDescriptor::mock()));
        let err = gw.embed(&["a".into(), "b".into()]).unwrap_err();
        assert!(matches!(err, GatewayError::Protocol(_)));
        assert!(gw.embed(&[]).is_err());
    }
}
