#![allow(dead_code)]

use std::sync::Arc;

use promptloop_core::engine::MutationTrigger;
use promptloop_core::gateway::{BackendDescriptor, MockBackend};
use promptloop_core::{
    EmbeddingCache, EngineConfig, EngineContext, Gateway, ModelRole, ReferenceCorpus,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS: [&str; 4] = [
    "Diagnosen: Pneumonie rechts basal. Arterielle Hypertonie.",
    "Anamnese: Fieber und produktiver Husten seit drei Tagen.",
    "Therapie und Verlauf: Antibiotische Therapie, rasche Besserung.",
    "Entlassungsmedikation: Ramipril 5 mg. Weiterbehandlung durch den Hausarzt.",
];

const WORDS: [&str; 16] = [
    "Diagnosen",
    "Anamnese",
    "Therapie",
    "Verlauf",
    "Patient",
    "Fieber",
    "Husten",
    "Befund",
    "Labor",
    "Entlassung",
    "Medikation",
    "Hausarzt",
    "stabil",
    "rasch",
    "Klinik",
    "Brief",
];

/// Capitalized sentence of 2..=7 random words.
pub fn sentence(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(2..=7);
    let mut words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    words[0] = WORDS[rng.gen_range(0..4)];
    let end = [".", "!", "?"][rng.gen_range(0..3)];
    format!("{}{end}", words.join(" "))
}

pub fn paragraph(rng: &mut impl Rng, sentences: usize) -> String {
    (0..sentences)
        .map(|_| sentence(rng))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A mock descriptor whose every role is scripted from `seed`. The
/// Prompting and Summarizer roles must be scripted: their echo replies
/// would nest the previous round's text and grow without bound.
pub fn scripted_backend(seed: u64, rounds: usize) -> BackendDescriptor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut backend = BackendDescriptor::mock();
    let mut script = |role: ModelRole, n: usize, sentences: std::ops::RangeInclusive<usize>| {
        let replies = (0..n)
            .map(|_| {
                let k = rng.gen_range(sentences.clone());
                paragraph(&mut rng, k)
            })
            .collect();
        backend.scripts.insert(role, replies);
    };
    script(ModelRole::Prompting, rounds + 2, 1..=5);
    script(ModelRole::Actor, 12 * rounds + 40, 1..=6);
    script(ModelRole::Summarizer, rounds + 2, 1..=3);
    script(ModelRole::Mutator, rounds + 10, 1..=1);
    backend
}

/// Configuration used by the determinism and resume checks: five feedback
/// rounds, then a mutation phase of five iterations.
pub fn five_round_config() -> EngineConfig {
    EngineConfig {
        samples_per_round: 4,
        best_capacity: 3,
        worst_capacity: 3,
        max_rounds: 20,
        mutation_trigger: MutationTrigger::AfterRounds(5),
        mutation_budget: 5,
        ..EngineConfig::default()
    }
}

pub struct Setup {
    pub mock: Arc<MockBackend>,
    pub gateway: Gateway,
    pub cache: EmbeddingCache,
    pub corpus: ReferenceCorpus,
    pub config: EngineConfig,
}

impl Setup {
    pub fn new(config: EngineConfig, backend: &BackendDescriptor) -> Self {
        Self::with_corpus(
            config,
            backend,
            CORPUS.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn with_corpus(
        config: EngineConfig,
        backend: &BackendDescriptor,
        corpus: Vec<String>,
    ) -> Self {
        let mock = Arc::new(MockBackend::from_descriptor(backend));
        let gateway = Gateway::new(mock.clone());
        let cache = EmbeddingCache::new();
        let corpus = ReferenceCorpus::embed(corpus, &gateway, &cache).expect("corpus embeds");
        Self {
            mock,
            gateway,
            cache,
            corpus,
            config,
        }
    }

    pub fn ctx(&self) -> EngineContext<'_> {
        EngineContext {
            config: &self.config,
            corpus: &self.corpus,
            gateway: &self.gateway,
            cache: &self.cache,
        }
    }
}
