//! Scripted, deterministic backend for offline runs.
//!
//! Chat replies come from per-role FIFO queues; an exhausted or unscripted
//! role answers `"ECHO: " + <last user message>`, cut to at most
//! [`ECHO_LIMIT`] bytes so that echoes of echoes stay bounded. Embeddings
//! are hashed byte-bigram counts, L2-normalized unless every count is zero.
//! Tests can pin the embedding of exact texts and queue transport failures.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use super::{
    BackendDescriptor, BackendKind, ChatExchange, GatewayError, HealthReport, HealthStatus,
    ModelBackend, ModelRole, Result, SamplingParams,
};

pub const DEFAULT_MOCK_DIM: usize = 64;
pub const ECHO_LIMIT: usize = 4096;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Mock embedding of `text` in `dim` dimensions.
pub fn mock_embedding(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut v = vec![0.0_f64; dim];
    for pair in text.as_bytes().windows(2) {
        v[(fnv1a64(pair) % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn echo(message: &str) -> String {
    let mut reply = format!("ECHO: {message}");
    if reply.len() > ECHO_LIMIT {
        let mut end = ECHO_LIMIT;
        while !reply.is_char_boundary(end) {
            end -= 1;
        }
        reply.truncate(end);
    }
    reply
}

/// A chat call as seen by the mock.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub exchange: ChatExchange,
    pub params: SamplingParams,
    pub reply: String,
}

#[derive(Debug, Clone)]
enum Scripted {
    Reply(String),
    Failure(String),
}

#[derive(Debug)]
pub struct MockBackend {
    descriptor: BackendDescriptor,
    queues: Mutex<BTreeMap<ModelRole, VecDeque<Scripted>>>,
    pinned: Mutex<BTreeMap<String, Vec<f64>>>,
    history: Mutex<Vec<RecordedCall>>,
}

impl MockBackend {
    pub fn new(dim: usize) -> Self {
        let descriptor = BackendDescriptor {
            embedding_dim: dim,
            ..BackendDescriptor::mock()
        };
        Self::from_descriptor(&descriptor)
    }

    /// Mock configured from a descriptor, including its scripted queues.
    pub fn from_descriptor(descriptor: &BackendDescriptor) -> Self {
        let queues = descriptor
            .scripts
            .iter()
            .map(|(role, replies)| {
                let queue = replies.iter().cloned().map(Scripted::Reply).collect();
                (*role, queue)
            })
            .collect();
        Self {
            descriptor: BackendDescriptor {
                kind: BackendKind::Mock,
                ..descriptor.clone()
            },
            queues: Mutex::new(queues),
            pinned: Mutex::new(BTreeMap::new()),
            history: Mutex::new(Vec::new()),
        }
    }

    /// Appends replies to the queue of `role`.
    pub fn with_script<I, S>(self, role: ModelRole, replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.push_script(role, replies);
        self
    }

    pub fn push_script<I, S>(&self, role: ModelRole, replies: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut queues = self.queues.lock().expect("mock queue lock");
        queues
            .entry(role)
            .or_default()
            .extend(replies.into_iter().map(|r| Scripted::Reply(r.into())));
    }

    /// Makes the next queued call of `role` fail as an unreachable backend.
    pub fn push_failure(&self, role: ModelRole, cause: impl Into<String>) {
        let mut queues = self.queues.lock().expect("mock queue lock");
        queues
            .entry(role)
            .or_default()
            .push_back(Scripted::Failure(cause.into()));
    }

    /// Embeds exactly `text` as `vector`, zero-padded to the mock dimension.
    pub fn pin_embedding(&self, text: impl Into<String>, vector: &[f64]) {
        let dim = self.descriptor.embedding_dim;
        assert!(
            vector.len() <= dim,
            "pinned vector longer than the mock dimension"
        );
        let mut v = vector.to_vec();
        v.resize(dim, 0.0);
        self.pinned
            .lock()
            .expect("mock pin lock")
            .insert(text.into(), v);
    }

    /// Pins `text` to the unit vector at cosine `score` from `e_0`.
    pub fn pin_score(&self, text: impl Into<String>, score: f64) {
        assert!((-1.0..=1.0).contains(&score), "score outside [-1, 1]");
        self.pin_embedding(text, &[score, (1.0 - score * score).sqrt()]);
    }

    /// Discards up to `count` scripted replies of `role`, returning how many
    /// were dropped. Used to line a fresh mock up with a partially replayed run.
    pub fn fast_forward(&self, role: ModelRole, count: usize) -> usize {
        let mut queues = self.queues.lock().expect("mock queue lock");
        let Some(queue) = queues.get_mut(&role) else {
            return 0;
        };
        let n = count.min(queue.len());
        queue.drain(..n);
        n
    }

    pub fn remaining(&self, role: ModelRole) -> usize {
        let queues = self.queues.lock().expect("mock queue lock");
        queues.get(&role).map_or(0, VecDeque::len)
    }

    pub fn dim(&self) -> usize {
        self.descriptor.embedding_dim
    }

    /// Every chat call made so far, in call order.
    pub fn history(&self) -> Vec<RecordedCall> {
        self.history.lock().expect("mock history lock").clone()
    }

    pub fn calls_for(&self, role: ModelRole) -> Vec<RecordedCall> {
        self.history()
            .into_iter()
            .filter(|c| c.exchange.role() == role)
            .collect()
    }
}

impl ModelBackend for MockBackend {
    fn chat(&self, exchange: &ChatExchange, params: &SamplingParams) -> Result<String> {
        let scripted = {
            let mut queues = self.queues.lock().expect("mock queue lock");
            queues
                .get_mut(&exchange.role())
                .and_then(VecDeque::pop_front)
        };
        let reply = match scripted {
            Some(Scripted::Reply(reply)) => reply,
            Some(Scripted::Failure(cause)) => {
                return Err(GatewayError::Unavailable { attempts: 1, cause })
            }
            None => echo(exchange.last_user_message()),
        };
        self.history
            .lock()
            .expect("mock history lock")
            .push(RecordedCall {
                exchange: exchange.clone(),
                params: *params,
                reply: reply.clone(),
            });
        Ok(reply)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let pinned = self.pinned.lock().expect("mock pin lock");
        Ok(texts
            .iter()
            .map(|t| match pinned.get(t) {
                Some(v) => v.clone(),
                None => mock_embedding(t, self.descriptor.embedding_dim),
            })
            .collect())
    }

    fn health_check(&self) -> HealthReport {
        HealthReport {
            status: HealthStatus::Ok,
            kind: BackendKind::Mock,
            model_name: self.descriptor.model_name.clone(),
            embedding_model_name: self.descriptor.embedding_model_name.clone(),
            cause: None,
            available_models: Vec::new(),
        }
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }
}
