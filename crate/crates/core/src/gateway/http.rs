//! Ollama-compatible REST client.
//!
//! Endpoints: `POST /api/chat`, `POST /api/embed`, `GET /api/tags`.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    BackendDescriptor, BackendKind, ChatExchange, GatewayError, HealthReport, HealthStatus,
    ModelBackend, Result, SamplingParams, Speaker,
};

#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize, PartialEq)]
struct WireOptions {
    temperature: f64,
    top_k: u32,
    top_p: f64,
    seed: u64,
}

impl From<&SamplingParams> for WireOptions {
    fn from(p: &SamplingParams) -> Self {
        Self {
            temperature: p.temperature,
            top_k: p.top_k,
            top_p: p.top_p,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    stream: bool,
    options: WireOptions,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    message: ChatResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: String,
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct TagsResponse {
    #[serde(default)]
    models: Vec<TagEntry>,
}

#[derive(Debug, Deserialize)]
struct TagEntry {
    name: String,
}

enum Failure {
    Retryable(String),
    Fatal(GatewayError),
}

pub struct HttpBackend {
    descriptor: BackendDescriptor,
    base_url: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.base_url)
            .field("model", &self.descriptor.model_name)
            .finish()
    }
}

impl HttpBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self> {
        if descriptor.kind != BackendKind::Http {
            return Err(GatewayError::InvalidConfig(
                "HttpBackend requires an http descriptor".into(),
            ));
        }
        descriptor.validate()?;
        let base_url = descriptor
            .base_url
            .as_deref()
            .unwrap_or_default()
            .trim()
            .trim_end_matches('/')
            .to_string();
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(descriptor.timeout_secs.max(1)))
            .build();
        Ok(Self {
            descriptor,
            base_url,
            agent,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }

    /// POSTs `body` with at most `max_retries + 1` attempts.
    fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R> {
        let payload = serde_json::to_value(body)
            .map_err(|e| GatewayError::Protocol(format!("cannot encode request: {e}")))?;
        let url = self.url(path);
        let attempts = self.descriptor.max_retries + 1;
        let mut last_cause = String::new();
        for attempt in 1..=attempts {
            match self.try_post(&url, &payload) {
                Ok(value) => {
                    return serde_json::from_value(value).map_err(|e| {
                        GatewayError::Protocol(format!("unexpected response from {url}: {e}"))
                    })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(cause)) => {
                    log::warn!("{url}: attempt {attempt}/{attempts} failed: {cause}");
                    last_cause = cause;
                    if attempt < attempts && self.descriptor.retry_backoff_ms > 0 {
                        thread::sleep(Duration::from_millis(
                            self.descriptor.retry_backoff_ms * u64::from(attempt),
                        ));
                    }
                }
            }
        }
        Err(GatewayError::Unavailable {
            attempts,
            cause: last_cause,
        })
    }

    fn try_post(&self, url: &str, payload: &Value) -> std::result::Result<Value, Failure> {
        match self.agent.post(url).send_json(payload) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| Failure::Retryable(format!("reading response body: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                if code >= 500 || code == 429 {
                    Err(Failure::Retryable(format!("HTTP {code}: {body}")))
                } else {
                    Err(Failure::Fatal(GatewayError::Protocol(format!(
                        "HTTP {code} from {url}: {body}"
                    ))))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(Failure::Retryable(t.to_string())),
        }
    }
}

fn wire_messages(exchange: &ChatExchange) -> Vec<WireMessage<'_>> {
    let mut messages = Vec::with_capacity(exchange.messages().len() + 1);
    if !exchange.system_prompt().is_empty() {
        messages.push(WireMessage {
            role: "system",
            content: exchange.system_prompt(),
        });
    }
    messages.extend(exchange.messages().iter().map(|m| WireMessage {
        role: match m.speaker {
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        },
        content: &m.text,
    }));
    messages
}

impl ModelBackend for HttpBackend {
    fn chat(&self, exchange: &ChatExchange, params: &SamplingParams) -> Result<String> {
        let request = ChatRequest {
            model: &self.descriptor.model_name,
            messages: wire_messages(exchange),
            stream: false,
            options: params.into(),
        };
        let response: ChatResponse = self.post_json("/api/chat", &request)?;
        Ok(response.message.content)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let request = EmbedRequest {
            model: &self.descriptor.embedding_model_name,
            input: texts,
        };
        let response: EmbedResponse = self.post_json("/api/embed", &request)?;
        Ok(response.embeddings)
    }

    fn health_check(&self) -> HealthReport {
        let mut report = HealthReport {
            status: HealthStatus::Unavailable,
            kind: BackendKind::Http,
            model_name: self.descriptor.model_name.clone(),
            embedding_model_name: self.descriptor.embedding_model_name.clone(),
            cause: None,
            available_models: Vec::new(),
        };
        match self.agent.get(&self.url("/api/tags")).call() {
            Ok(resp) => {
                report.status = HealthStatus::Ok;
                if let Ok(tags) = resp.into_json::<TagsResponse>() {
                    report.available_models = tags.models.into_iter().map(|m| m.name).collect();
                }
            }
            Err(ureq::Error::Status(code, _)) => {
                report.cause = Some(format!("HTTP {code} from {}", self.base_url));
            }
            Err(ureq::Error::Transport(t)) => report.cause = Some(t.to_string()),
        }
        report
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }
}
