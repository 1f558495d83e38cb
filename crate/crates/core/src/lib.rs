//! Data-free iterative prompt optimization.
//!
//! A task prompt is expanded into a step-by-step prompt, documents are
//! generated from it and scored by embedding similarity against a reference
//! corpus, and threshold-routed critic feedback drives the next prompt. Once
//! enough good prompts are archived, single sentences of them are rephrased
//! and kept when they score better. Every step is recorded in a replayable
//! JSON-lines event log.

pub mod config;
pub mod demo;
pub mod engine;
pub mod gateway;
pub mod mutation;
pub mod scalar;
pub mod scoring;
pub mod store;

pub use config::CliConfig;
pub use engine::{
    resume_optimization, run_optimization, EngineConfig, EngineContext, EngineError, EngineState,
    OptimizationResult, Phase, PromptCandidate,
};
pub use gateway::{BackendDescriptor, Gateway, MockBackend, ModelRole, SamplingParams};
pub use scalar::Real;
pub use store::{RunEvent, RunLog};

/// Similarity score in double precision, as used by the engine.
pub type Score = scoring::SimilarityScore<f64>;
/// Single-precision score for memory-bound embedding work.
pub type Score32 = scoring::SimilarityScore<f32>;
pub type ReferenceCorpus = scoring::ReferenceCorpus<f64>;
pub type ReferenceCorpus32 = scoring::ReferenceCorpus<f32>;
pub type EmbeddingCache = scoring::EmbeddingCache<f64>;
pub type EmbeddingCache32 = scoring::EmbeddingCache<f32>;
