//! Embedding similarity between generated text and a reference corpus.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::scalar::Real;

/// Texts sent per embedding request while loading a corpus.
const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("dimension mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },
    #[error("reference corpus is empty")]
    EmptyCorpus,
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub type Result<T, E = ScoringError> = std::result::Result<T, E>;

/// Cosine similarity, always within `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore<T = f64>(T);

impl<T: Real> SimilarityScore<T> {
    /// Clamps `value` into `[-1, 1]`. NaN is rejected.
    pub fn clamped(value: T) -> Result<Self> {
        if value.is_nan() {
            return Err(ScoringError::DegenerateInput("similarity is NaN".into()));
        }
        Ok(Self(value.max(-T::one()).min(T::one())))
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// Cosine of the angle between `u` and `v`.
pub fn cosine<T: Real>(u: &[T], v: &[T]) -> Result<SimilarityScore<T>> {
    if u.len() != v.len() {
        return Err(ScoringError::Shape {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in u.iter().zip(v) {
        dot = dot + a * b;
        uu = uu + a * a;
        vv = vv + b * b;
    }
    if uu.is_zero() || vv.is_zero() {
        return Err(ScoringError::DegenerateInput(
            "cosine of a zero vector is undefined".into(),
        ));
    }
    SimilarityScore::clamped(dot / (uu.sqrt() * vv.sqrt()))
}

/// Arithmetic mean, summed in ascending order so the result does not depend
/// on input order.
pub(crate) fn order_free_mean<T: Real>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).expect("scores are never NaN"));
    let sum = values.iter().fold(T::zero(), |acc, &x| acc + x);
    sum / T::from_usize(values.len()).expect("length fits the scalar type")
}

/// Memoizes embeddings by exact text.
#[derive(Debug, Default)]
pub struct EmbeddingCache<T = f64> {
    entries: RwLock<HashMap<String, Arc<Vec<T>>>>,
}

impl<T: Real> EmbeddingCache<T> {
    pub fn new() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, text: &str) -> Option<Arc<Vec<T>>> {
        self.entries.read().expect("cache lock").get(text).cloned()
    }

    /// Embeddings for `texts` in order; misses go to the backend in one batch.
    pub fn embed_all(&self, texts: &[String], gateway: &Gateway) -> Result<Vec<Arc<Vec<T>>>> {
        let mut missing: Vec<String> = Vec::new();
        {
            let entries = self.entries.read().expect("cache lock");
            for t in texts {
                if !entries.contains_key(t) && !missing.contains(t) {
                    missing.push(t.clone());
                }
            }
        }
        if !missing.is_empty() {
            let fresh = gateway.embed(&missing)?;
            let mut entries = self.entries.write().expect("cache lock");
            for (text, vector) in missing.into_iter().zip(fresh) {
                let vector: Vec<T> = vector.into_iter().map(T::from_wire).collect();
                entries.entry(text).or_insert_with(|| Arc::new(vector));
            }
        }
        let entries = self.entries.read().expect("cache lock");
        Ok(texts.iter().map(|t| Arc::clone(&entries[t])).collect())
    }

    pub fn embed_one(&self, text: &str, gateway: &Gateway) -> Result<Arc<Vec<T>>> {
        if let Some(hit) = self.get(text) {
            return Ok(hit);
        }
        let mut v = self.embed_all(&[text.to_string()], gateway)?;
        Ok(v.pop().expect("one embedding per text"))
    }
}

/// Real documents used as the scoring benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCorpus<T = f64> {
    documents: Vec<String>,
    embeddings: Vec<Vec<T>>,
}

impl<T: Real> ReferenceCorpus<T> {
    /// Corpus from precomputed embeddings.
    pub fn from_parts(documents: Vec<String>, embeddings: Vec<Vec<T>>) -> Result<Self> {
        if documents.is_empty() {
            return Err(ScoringError::EmptyCorpus);
        }
        if documents.len() != embeddings.len() {
            return Err(ScoringError::Shape {
                left: documents.len(),
                right: embeddings.len(),
            });
        }
        let dim = embeddings[0].len();
        for (i, e) in embeddings.iter().enumerate() {
            if e.len() != dim {
                return Err(ScoringError::Shape {
                    left: dim,
                    right: e.len(),
                });
            }
            if e.iter().all(|x| x.is_zero()) {
                return Err(ScoringError::DegenerateInput(format!(
                    "corpus document {} embeds to the zero vector",
                    i + 1
                )));
            }
        }
        Ok(Self {
            documents,
            embeddings,
        })
    }

    /// Embeds `documents` through the cache.
    pub fn embed(
        documents: Vec<String>,
        gateway: &Gateway,
        cache: &EmbeddingCache<T>,
    ) -> Result<Self> {
        if documents.is_empty() {
            return Err(ScoringError::EmptyCorpus);
        }
        let mut embeddings = Vec::with_capacity(documents.len());
        for chunk in documents.chunks(EMBED_BATCH) {
            for v in cache.embed_all(chunk, gateway)? {
                embeddings.push(v.as_ref().clone());
            }
        }
        Self::from_parts(documents, embeddings)
    }

    pub fn documents(&self) -> &[String] {
        &self.documents
    }

    pub fn embeddings(&self) -> &[Vec<T>] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].len()
    }

    /// SHA-256 over the canonical JSON array of documents.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(&self.documents).expect("strings serialize");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Mean cosine of an already embedded candidate against every document.
    pub fn score_embedding(&self, candidate: &[T]) -> Result<SimilarityScore<T>> {
        if candidate.len() != self.dim() {
            return Err(ScoringError::Shape {
                left: candidate.len(),
                right: self.dim(),
            });
        }
        if candidate.iter().all(|x| x.is_zero()) {
            return Err(ScoringError::DegenerateInput(
                "candidate text embeds to the zero vector".into(),
            ));
        }
        let mut cosines = self
            .embeddings
            .iter()
            .map(|e| cosine(candidate, e).map(SimilarityScore::value))
            .collect::<Result<Vec<_>>>()?;
        SimilarityScore::clamped(order_free_mean(&mut cosines))
    }
}

fn check_candidate(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(ScoringError::DegenerateInput(
            "candidate text is empty".into(),
        ));
    }
    Ok(())
}

/// Mean cosine similarity between `candidate_text` and every corpus document.
pub fn corpus_score<T: Real>(
    candidate_text: &str,
    corpus: &ReferenceCorpus<T>,
    cache: &EmbeddingCache<T>,
    gateway: &Gateway,
) -> Result<SimilarityScore<T>> {
    check_candidate(candidate_text)?;
    let embedding = cache.embed_one(candidate_text, gateway)?;
    corpus.score_embedding(&embedding)
}

/// Scores several candidates with a single batched embedding request.
/// Results are in input order.
pub fn corpus_scores<T: Real>(
    candidates: &[String],
    corpus: &ReferenceCorpus<T>,
    cache: &EmbeddingCache<T>,
    gateway: &Gateway,
) -> Result<Vec<SimilarityScore<T>>> {
    for c in candidates {
        check_candidate(c)?;
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    cache
        .embed_all(candidates, gateway)?
        .iter()
        .map(|e| corpus.score_embedding(e))
        .collect()
}

#[derive(Debug, Deserialize)]
struct CorpusRecord {
    text: String,
}

/// Reads JSON-lines records with a required `"text"` field, in file order.
/// Blank lines are skipped; unknown fields are ignored.
pub fn read_corpus_documents(path: &Path, max_documents: Option<usize>) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|source| ScoringError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let limit = max_documents.unwrap_or(usize::MAX);
    let mut documents = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if documents.len() >= limit {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(line).map_err(|e| ScoringError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
        documents.push(record.text);
    }
    if documents.is_empty() {
        return Err(ScoringError::EmptyCorpus);
    }
    Ok(documents)
}

/// Loads and embeds a corpus file.
pub fn load_corpus<T: Real>(
    path: &Path,
    max_documents: Option<usize>,
    gateway: &Gateway,
    cache: &EmbeddingCache<T>,
) -> Result<ReferenceCorpus<T>> {
    if max_documents == Some(0) {
        return Err(ScoringError::DegenerateInput(
            "max_documents must be positive".into(),
        ));
    }
    let documents = read_corpus_documents(path, max_documents)?;
    ReferenceCorpus::embed(documents, gateway, cache)
}
