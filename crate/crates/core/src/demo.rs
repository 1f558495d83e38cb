//! Offline end-to-end scenario on the scripted mock backend.
//!
//! The prompting, actor and feedback roles run on the echo fallback, so each
//! new step-by-step prompt repeats the task together with the latest feedback
//! summary, and the actor repeats that prompt. The summarizer is scripted with
//! feedback that quotes progressively more of the house style of the bundled
//! discharge-letter corpus, which pulls the actor's output toward the corpus
//! under the mock bigram embedding. The feedback-loop score therefore rises
//! round over round.

use std::path::Path;

use crate::engine::{run_optimization, EngineConfig, EngineContext, OptimizationResult, Result};
use crate::gateway::{BackendDescriptor, Gateway, ModelRole};
use crate::scoring::{EmbeddingCache, ReferenceCorpus};

pub const DEMO_TASK: &str = "Schreibe einen Arztbrief.";

/// Reference documents of the demo (synthetic discharge-letter fragments).
pub const DEMO_CORPUS: [&str; 6] = [
    "Sehr geehrte Frau Kollegin, sehr geehrter Herr Kollege, wir berichten über Ihren Patienten, \
     der sich vom 3. bis 10. März in unserer stationären Behandlung befand.",
    "Diagnosen: Ambulant erworbene Pneumonie rechts basal. Arterielle Hypertonie. \
     Diabetes mellitus Typ 2, nicht insulinpflichtig.",
    "Anamnese: Der Patient stellte sich mit Fieber, produktivem Husten und Belastungsdyspnoe \
     seit drei Tagen in unserer Notaufnahme vor.",
    "Therapie und Verlauf: Unter kalkulierter antibiotischer Therapie mit Ampicillin und \
     Sulbactam besserte sich der Allgemeinzustand rasch, die Entzündungswerte waren rückläufig.",
    "Entlassungsmedikation: Metformin 1000 mg 1-0-1, Ramipril 5 mg 1-0-0. Wir entlassen den \
     Patienten in gutem Allgemeinzustand in die hausärztliche Weiterbehandlung.",
    "Mit freundlichen kollegialen Grüßen, Oberarzt der Medizinischen Klinik, Stationsärztin.",
];

/// Scripted summarizer replies, one per feedback-loop round.
pub const DEMO_SUMMARIES: [&str; 4] = [
    "Der Brief braucht Diagnosen, Anamnese sowie Therapie und Verlauf des Patienten.",
    "Sehr geehrte Frau Kollegin, sehr geehrter Herr Kollege, wir berichten über Ihren Patienten. \
     Diagnosen: Pneumonie, arterielle Hypertonie. Anamnese: Fieber und Husten. \
     Therapie und Verlauf: antibiotische Therapie.",
    "Sehr geehrte Frau Kollegin, sehr geehrter Herr Kollege, wir berichten über Ihren Patienten, \
     der sich in unserer stationären Behandlung befand. Diagnosen: Ambulant erworbene Pneumonie, \
     arterielle Hypertonie, Diabetes mellitus Typ 2. Anamnese: Der Patient stellte sich mit \
     Fieber, produktivem Husten und Dyspnoe in unserer Notaufnahme vor. Therapie und Verlauf: \
     Unter antibiotischer Therapie besserte sich der Allgemeinzustand, die Entzündungswerte \
     waren rückläufig. Entlassungsmedikation: Metformin, Ramipril.",
    "Sehr geehrte Frau Kollegin, sehr geehrter Herr Kollege, wir berichten über Ihren Patienten, \
     der sich in unserer stationären Behandlung befand. Diagnosen: Ambulant erworbene Pneumonie \
     rechts basal, arterielle Hypertonie, Diabetes mellitus Typ 2. Anamnese: Der Patient stellte \
     sich mit Fieber, produktivem Husten und Belastungsdyspnoe seit drei Tagen in unserer \
     Notaufnahme vor. Therapie und Verlauf: Unter kalkulierter antibiotischer Therapie besserte \
     sich der Allgemeinzustand rasch, die Entzündungswerte waren rückläufig. \
     Entlassungsmedikation: Metformin 1000 mg, Ramipril 5 mg. Wir entlassen den Patienten in \
     gutem Allgemeinzustand in die hausärztliche Weiterbehandlung. Mit freundlichen kollegialen \
     Grüßen.",
];

/// Everything needed to run the demo.
#[derive(Debug, Clone)]
pub struct DemoScenario {
    pub task_prompt: String,
    pub config: EngineConfig,
    pub backend: BackendDescriptor,
    pub corpus: Vec<String>,
}

impl Default for DemoScenario {
    fn default() -> Self {
        let mut backend = BackendDescriptor::mock();
        backend.scripts.insert(
            ModelRole::Summarizer,
            DEMO_SUMMARIES.iter().map(|s| s.to_string()).collect(),
        );
        Self {
            task_prompt: DEMO_TASK.to_string(),
            config: EngineConfig {
                samples_per_round: 3,
                best_capacity: 4,
                worst_capacity: 2,
                max_rounds: 8,
                mutation_budget: 4,
                ..EngineConfig::default()
            },
            backend,
            corpus: DEMO_CORPUS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl DemoScenario {
    /// The corpus as JSON lines.
    pub fn corpus_jsonl(&self) -> String {
        self.corpus
            .iter()
            .map(|t| serde_json::json!({ "text": t }).to_string() + "\n")
            .collect()
    }
}

/// Outcome of [`run_demo`].
#[derive(Debug)]
pub struct DemoOutcome {
    pub result: OptimizationResult,
    /// Mean score of each feedback-loop round.
    pub trajectory: Vec<f64>,
}

/// Runs the demo scenario, writing the event log to `log_path` if given.
pub fn run_demo(scenario: &DemoScenario, log_path: Option<&Path>) -> Result<DemoOutcome> {
    let gateway = Gateway::from_descriptor(&scenario.backend)?;
    let cache = EmbeddingCache::new();
    let corpus = ReferenceCorpus::embed(scenario.corpus.clone(), &gateway, &cache)?;
    let ctx = EngineContext {
        config: &scenario.config,
        corpus: &corpus,
        gateway: &gateway,
        cache: &cache,
    };
    let result = run_optimization(&ctx, &scenario.task_prompt, log_path)?;
    let trajectory = result.rounds.iter().map(|r| r.mean_score).collect();
    Ok(DemoOutcome { result, trajectory })
}
