mod common;

use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{five_round_config, scripted_backend, Setup, CORPUS};
use promptloop_core::gateway::{
    BackendDescriptor, ChatExchange, GatewayError, HealthReport, HealthStatus, ModelBackend,
};
use promptloop_core::store::{self, read_log, EventKind, StoreError};
use promptloop_core::{
    resume_optimization, run_optimization, EmbeddingCache, EngineError, EngineState, Gateway,
    MockBackend, Phase, ReferenceCorpus, SamplingParams,
};

fn events_of(text: &str) -> Vec<&str> {
    text.lines().skip(1).collect()
}

#[test]
fn identical_inputs_give_identical_logs() {
    let backend = scripted_backend(7, 5);
    let a = Setup::new(five_round_config(), &backend);
    let b = Setup::new(five_round_config(), &backend);
    let ra = run_optimization(&a.ctx(), "Schreibe einen Arztbrief.", None).unwrap();
    let rb = run_optimization(&b.ctx(), "Schreibe einen Arztbrief.", None).unwrap();
    assert_eq!(ra.log.canonical_events(), rb.log.canonical_events());
    assert_eq!(ra.rounds.len(), 5);
    assert_eq!(ra.state.mutation_iteration, 5);
    assert_eq!(ra.state.phase, Phase::Finished);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let backend = scripted_backend(11, 5);
    let full_path = dir.path().join("full.jsonl");
    let full = Setup::new(five_round_config(), &backend);
    run_optimization(&full.ctx(), "Schreibe einen Arztbrief.", Some(&full_path)).unwrap();
    let full_text = fs::read_to_string(&full_path).unwrap();

    // Cut right after the prompt regenerated at the end of round 3.
    let log = read_log(&full_path).unwrap();
    let round3 = log
        .events
        .iter()
        .position(|e| matches!(e.kind, EventKind::ArchivesUpdated { round: 3, .. }))
        .unwrap();
    let keep = round3 + 2;
    assert!(matches!(
        log.events[keep - 1].kind,
        EventKind::PromptRegenerated { .. }
    ));
    let lines: Vec<&str> = full_text.lines().collect();
    let cut_path = dir.path().join("cut.jsonl");
    // Include half of the next line to simulate a crash mid-write.
    let torn = &lines[keep + 1][..lines[keep + 1].len() / 2];
    fs::write(&cut_path, lines[..=keep].join("\n") + "\n" + torn).unwrap();

    let resumed = Setup::new(five_round_config(), &backend);
    for (role, n) in store::replies_consumed(&log.events[..keep]) {
        resumed.mock.fast_forward(role, n);
    }
    let result = resume_optimization(&resumed.ctx(), &cut_path).unwrap();
    assert_eq!(result.rounds.len(), 2);
    let resumed_text = fs::read_to_string(&cut_path).unwrap();
    assert_eq!(events_of(&resumed_text), events_of(&full_text));
    assert_eq!(resumed_text, full_text);
}

#[test]
fn uncommitted_tail_is_dropped_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    let backend = scripted_backend(3, 5);
    let setup = Setup::new(five_round_config(), &backend);
    run_optimization(&setup.ctx(), "Aufgabe.", Some(&path)).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let log = read_log(&path).unwrap();
    // Stop in the middle of round 2: RoundStarted and a few samples.
    let start = log
        .events
        .iter()
        .position(|e| matches!(e.kind, EventKind::RoundStarted { round: 2, .. }))
        .unwrap();
    let lines: Vec<&str> = text.lines().collect();
    fs::write(&path, lines[..start + 4].join("\n") + "\n").unwrap();

    let fresh = Setup::new(five_round_config(), &backend);
    for (role, n) in store::replies_consumed(&log.events[..start]) {
        fresh.mock.fast_forward(role, n);
    }
    let result = resume_optimization(&fresh.ctx(), &path).unwrap();
    assert_eq!(result.rounds.first().unwrap().round, 2);
    assert_eq!(fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn finished_runs_and_foreign_configs_cannot_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    let backend = scripted_backend(5, 5);
    let setup = Setup::new(five_round_config(), &backend);
    run_optimization(&setup.ctx(), "Aufgabe.", Some(&path)).unwrap();
    assert!(matches!(
        resume_optimization(&setup.ctx(), &path),
        Err(EngineError::Store(StoreError::AlreadyFinished))
    ));

    let other = Setup::new(
        promptloop_core::EngineConfig {
            seed: 7,
            ..five_round_config()
        },
        &backend,
    );
    assert!(matches!(
        resume_optimization(&other.ctx(), &path),
        Err(EngineError::Store(StoreError::DigestMismatch {
            which: "config",
            ..
        }))
    ));
    let corpus = Setup::with_corpus(five_round_config(), &backend, vec!["anders".into()]);
    assert!(matches!(
        resume_optimization(&corpus.ctx(), &path),
        Err(EngineError::Store(StoreError::DigestMismatch {
            which: "corpus",
            ..
        }))
    ));
    assert!(run_optimization(&setup.ctx(), "Aufgabe.", Some(&path)).is_err());
}

/// Delegates to a mock but fails one chat call.
struct FailOnce {
    inner: MockBackend,
    calls: AtomicUsize,
    fail_at: usize,
}

impl ModelBackend for FailOnce {
    fn chat(
        &self,
        exchange: &ChatExchange,
        params: &SamplingParams,
    ) -> Result<String, GatewayError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == self.fail_at {
            return Err(GatewayError::Unavailable {
                attempts: 3,
                cause: "connection reset".into(),
            });
        }
        self.inner.chat(exchange, params)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        self.inner.embed(texts)
    }

    fn health_check(&self) -> HealthReport {
        self.inner.health_check()
    }

    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }
}

#[test]
fn mid_run_failure_leaves_resumable_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    let backend = scripted_backend(13, 5);
    let config = five_round_config();
    // Initial plan, then round 1 (4 samples, 4 feedbacks, summary, plan),
    // then two calls into round 2.
    let gateway = Gateway::from_backend(FailOnce {
        inner: MockBackend::from_descriptor(&backend),
        calls: AtomicUsize::new(0),
        fail_at: 1 + 10 + 2,
    });
    let cache = EmbeddingCache::new();
    let corpus = ReferenceCorpus::embed(
        CORPUS.iter().map(|s| s.to_string()).collect(),
        &gateway,
        &cache,
    )
    .unwrap();
    let ctx = promptloop_core::EngineContext {
        config: &config,
        corpus: &corpus,
        gateway: &gateway,
        cache: &cache,
    };
    let err = run_optimization(&ctx, "Aufgabe.", Some(&path)).unwrap_err();
    assert!(matches!(err, EngineError::RoundAborted { round: 2, .. }));

    let log = read_log(&path).unwrap();
    let last = log.events.last().unwrap();
    assert!(matches!(
        last.kind,
        EventKind::BackendFailure {
            phase: Phase::FeedbackLoop,
            ..
        }
    ));
    assert!(!log
        .events
        .iter()
        .any(|e| matches!(e.kind, EventKind::RoundStarted { round: 2, .. })));
    let state = EngineState::replay(&config, &log.events).unwrap();
    assert_eq!(state.round, 1);

    let fresh = Setup::new(config, &backend);
    let result = resume_optimization(&fresh.ctx(), &path).unwrap();
    assert_eq!(result.state.phase, Phase::Finished);
    let replayed = EngineState::replay(&fresh.config, result.log.events()).unwrap();
    assert_eq!(replayed, result.state);
}

struct Down;

impl ModelBackend for Down {
    fn chat(&self, _: &ChatExchange, _: &SamplingParams) -> Result<String, GatewayError> {
        unreachable!("health check fails first")
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        MockBackend::new(8).embed(texts)
    }

    fn health_check(&self) -> HealthReport {
        HealthReport {
            status: HealthStatus::Unavailable,
            kind: promptloop_core::gateway::BackendKind::Http,
            model_name: "m".into(),
            embedding_model_name: "e".into(),
            cause: Some("connection refused".into()),
            available_models: Vec::new(),
        }
    }

    fn descriptor(&self) -> &BackendDescriptor {
        static MOCK: std::sync::OnceLock<BackendDescriptor> = std::sync::OnceLock::new();
        MOCK.get_or_init(BackendDescriptor::mock)
    }
}

#[test]
fn unavailable_backend_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    let gateway = Gateway::new(Arc::new(Down));
    let cache = EmbeddingCache::new();
    let corpus = ReferenceCorpus::embed(vec!["Hallo Welt".into()], &gateway, &cache).unwrap();
    let config = five_round_config();
    let ctx = promptloop_core::EngineContext {
        config: &config,
        corpus: &corpus,
        gateway: &gateway,
        cache: &cache,
    };
    let err = run_optimization(&ctx, "Aufgabe.", Some(&path)).unwrap_err();
    assert!(matches!(
        err,
        EngineError::Gateway(GatewayError::Unavailable { .. })
    ));
    assert!(!path.exists());
}

#[test]
fn best_candidate_is_archive_maximum() {
    let backend = scripted_backend(21, 5);
    let setup = Setup::new(five_round_config(), &backend);
    let result = run_optimization(&setup.ctx(), "Aufgabe.", None).unwrap();
    let top = result.state.best.top().unwrap();
    assert_eq!(result.best.score, Some(top));
    let max_seen = result
        .log
        .events()
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::ArchivesUpdated { score, .. } => Some(*score),
            EventKind::MutationApplied { candidate, .. } => candidate.score,
            _ => None,
        })
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(top, max_seen);
}
