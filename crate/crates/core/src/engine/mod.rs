//! Actor-critic feedback loop.
//!
//! Each round samples documents from the current step-by-step prompt, scores
//! them against the reference corpus, routes every sample to diagnostic or
//! general feedback by the running threshold, summarizes the feedback, updates
//! the best/worst archives and asks the prompting model for a better prompt.
//!
//! [`EngineState`] is event-sourced: it only ever changes through
//! [`EngineState::apply`], and a round's events are computed in full before
//! any of them is applied, so a failed round leaves the state untouched.

mod archive;
mod driver;
pub mod prompts;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{update_archives, ArchiveEntry, ArchiveKind, ArchiveSlot, Offer, PromptArchive};
pub(crate) use driver::commit;
pub use driver::{resume_optimization, run_optimization, OptimizationResult};
pub use prompts::SystemPrompts;

use crate::gateway::{Gateway, GatewayError, ModelRole, RoleParams, SamplingParams, DEFAULT_SEED};
use crate::scoring::{
    corpus_scores, order_free_mean, EmbeddingCache, ReferenceCorpus, ScoringError,
};
use crate::store::{EventKind, RunEvent, StoreError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    InvalidInput(String),
    #[error("round {round} aborted: {cause}")]
    RoundAborted { round: u32, cause: String },
    #[error("inconsistent event log: {0}")]
    Replay(String),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

/// Identifier of a prompt candidate; assigned in arrival order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(pub u64);

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Initial,
    Refined,
    Mutated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: CandidateId,
    /// The user's original intent.
    pub task_prompt: String,
    /// Step-by-step prompt handed to the actor.
    pub step_plan: String,
    pub origin: Origin,
    /// Round in which the candidate is (or was) evaluated.
    pub round: u32,
    /// Mean similarity of its samples, once evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl PromptCandidate {
    pub fn with_score(&self, score: f64) -> Self {
        Self {
            score: Some(score),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Diagnostic,
    General,
}

/// One actor output with its score and feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub candidate_id: CandidateId,
    pub sample_index: usize,
    pub output_text: String,
    pub score: f64,
    pub route: Route,
    pub feedback_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    FeedbackLoop,
    Mutation,
    Finished,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::FeedbackLoop => "feedback_loop",
            Phase::Mutation => "mutation",
            Phase::Finished => "finished",
        })
    }
}

/// When the feedback loop hands over to guided mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MutationTrigger {
    /// As soon as the best archive is full.
    #[default]
    BestArchiveFull,
    /// After this many completed rounds.
    AfterRounds(u32),
    /// Feedback loop only.
    Never,
}

/// Engine knobs. Defaults for the role sampling parameters and the seed are
/// the published pipeline settings; the remaining defaults are local choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub samples_per_round: usize,
    pub best_capacity: usize,
    pub worst_capacity: usize,
    pub max_rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_target: Option<f64>,
    pub mutation_trigger: MutationTrigger,
    pub mutation_budget: u32,
    pub seed: u64,
    pub role_params: RoleParams,
    pub prompts: SystemPrompts,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            samples_per_round: 4,
            best_capacity: 5,
            worst_capacity: 5,
            max_rounds: 20,
            score_target: None,
            mutation_trigger: MutationTrigger::BestArchiveFull,
            mutation_budget: 10,
            seed: DEFAULT_SEED,
            role_params: RoleParams::default(),
            prompts: SystemPrompts::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if self.samples_per_round == 0 {
            return bad("samples_per_round must be >= 1");
        }
        if self.best_capacity == 0 || self.worst_capacity == 0 {
            return bad("archive capacities must be >= 1");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be >= 1");
        }
        if let Some(t) = self.score_target {
            if !(0.0..=1.0).contains(&t) {
                return bad("score_target must lie in [0, 1]");
            }
        }
        if self.mutation_trigger == MutationTrigger::AfterRounds(0) {
            return bad("mutation_trigger after_rounds must be >= 1");
        }
        self.role_params
            .validate()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))
    }

    pub fn params(&self, role: ModelRole) -> &SamplingParams {
        self.role_params.get(role)
    }
}

/// Everything a round needs besides the state.
#[derive(Debug, Clone, Copy)]
pub struct EngineContext<'a> {
    pub config: &'a EngineConfig,
    pub corpus: &'a ReferenceCorpus,
    pub gateway: &'a Gateway,
    pub cache: &'a EmbeddingCache,
}

/// The optimizer's state, rebuilt from events on replay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineState {
    /// Completed feedback-loop rounds.
    pub round: u32,
    pub threshold: Option<f64>,
    pub best: PromptArchive,
    pub worst: PromptArchive,
    pub current: Option<PromptCandidate>,
    pub phase: Phase,
    pub task_prompt: String,
    /// Completed mutation iterations, including failed ones.
    pub mutation_iteration: u32,
    pub next_candidate_id: u64,
    pub seed: u64,
    pub run_finished: bool,
}

impl EngineState {
    pub fn new(config: &EngineConfig) -> Self {
        Self {
            round: 0,
            threshold: None,
            best: PromptArchive::best(config.best_capacity),
            worst: PromptArchive::worst(config.worst_capacity),
            current: None,
            phase: Phase::FeedbackLoop,
            task_prompt: String::new(),
            mutation_iteration: 0,
            next_candidate_id: 1,
            seed: config.seed,
            run_finished: false,
        }
    }

    /// Rebuilds the state from a sequence of events.
    pub fn replay<'a>(
        config: &EngineConfig,
        events: impl IntoIterator<Item = &'a RunEvent>,
    ) -> Result<Self> {
        let mut state = Self::new(config);
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    /// Generator for mutation iteration `mutation_iteration`: ChaCha8 seeded
    /// with the run seed, on stream = iteration index. Each iteration draws
    /// the archive entry first, then the sentence.
    pub fn mutation_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(self.mutation_iteration));
        rng
    }

    pub fn current(&self) -> Result<&PromptCandidate> {
        self.current
            .as_ref()
            .ok_or_else(|| EngineError::Replay("no current prompt".into()))
    }

    /// Best candidate seen so far.
    pub fn best_candidate(&self) -> Option<PromptCandidate> {
        self.best.entries().first().map(|e| e.candidate.clone())
    }

    fn allocate(&mut self, id: CandidateId) -> Result<()> {
        if id.0 != self.next_candidate_id {
            return Err(EngineError::Replay(format!(
                "expected candidate id {}, found {}",
                self.next_candidate_id, id.0
            )));
        }
        self.next_candidate_id += 1;
        Ok(())
    }

    pub fn apply(&mut self, event: &RunEvent) -> Result<()> {
        if self.run_finished {
            return Err(EngineError::Replay("event after RunFinished".into()));
        }
        match &event.kind {
            EventKind::RunStarted { task_prompt, seed } => {
                if *seed != self.seed {
                    return Err(EngineError::Replay(format!(
                        "log seed {seed} differs from configured seed {}",
                        self.seed
                    )));
                }
                self.task_prompt = task_prompt.clone();
            }
            EventKind::ThresholdUpdated { threshold, .. } => {
                if matches!(self.threshold, Some(t) if *threshold < t) {
                    return Err(EngineError::Replay("threshold decreased".into()));
                }
                self.threshold = Some(*threshold);
            }
            EventKind::ArchivesUpdated {
                candidate_id,
                score,
                best,
                worst,
                ..
            } => {
                let scored = self.current()?.with_score(*score);
                if scored.id != *candidate_id {
                    return Err(EngineError::Replay(format!(
                        "archives updated for {candidate_id} but current prompt is {}",
                        scored.id
                    )));
                }
                self.best.offer(&scored);
                self.worst.offer(&scored);
                if self.best.slots() != *best || self.worst.slots() != *worst {
                    return Err(EngineError::Replay(
                        "archive contents differ from the logged snapshot".into(),
                    ));
                }
                self.current = Some(scored);
                self.round += 1;
            }
            EventKind::PromptRegenerated { candidate } => {
                self.allocate(candidate.id)?;
                self.current = Some(candidate.clone());
            }
            EventKind::PhaseTransition { from, to, .. } => {
                if *from != self.phase {
                    return Err(EngineError::Replay(format!(
                        "transition from {from} while in {}",
                        self.phase
                    )));
                }
                self.phase = *to;
            }
            EventKind::MutationApplied {
                candidate,
                accepted,
                best,
                ..
            } => {
                self.allocate(candidate.id)?;
                if self.best.offer(candidate).accepted() != *accepted || self.best.slots() != *best
                {
                    return Err(EngineError::Replay(format!(
                        "mutation {} disagrees with the archive",
                        candidate.id
                    )));
                }
                self.mutation_iteration += 1;
            }
            EventKind::MutationRejected { .. } => self.mutation_iteration += 1,
            EventKind::BackendFailure { phase, .. } => {
                if *phase == Phase::Mutation {
                    self.mutation_iteration += 1;
                }
            }
            EventKind::RunFinished { .. } => {
                self.run_finished = true;
            }
            EventKind::RoundStarted { .. }
            | EventKind::SampleGenerated { .. }
            | EventKind::SampleScored { .. }
            | EventKind::FeedbackIssued { .. }
            | EventKind::RoundSummarized { .. } => {}
        }
        Ok(())
    }
}

/// Everything that happened in one feedback-loop round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub candidate_id: CandidateId,
    pub samples: Vec<ScoredSample>,
    pub mean_score: f64,
    pub threshold: f64,
    pub summary: String,
    pub next_candidate: PromptCandidate,
}

/// Events and record of a successful round, not yet committed.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub events: Vec<EventKind>,
    pub record: RoundRecord,
}

/// Asks the prompting model for a step-by-step prompt.
pub fn generate_step_plan(
    ctx: &EngineContext<'_>,
    task_prompt: &str,
    feedback_summary: Option<&str>,
    best: &PromptArchive,
    worst: &PromptArchive,
) -> Result<String, GatewayError> {
    let exchange = prompts::prompting_exchange(
        &ctx.config.prompts,
        task_prompt,
        feedback_summary,
        best,
        worst,
    );
    let plan = ctx
        .gateway
        .chat(&exchange, ctx.config.params(ModelRole::Prompting))?;
    Ok(plan.trim().to_string())
}

/// Below the threshold goes to diagnostic feedback; at or above to general.
pub fn route_feedback(score: f64, threshold: f64) -> Route {
    if score < threshold {
        Route::Diagnostic
    } else {
        Route::General
    }
}

/// Feedback on one sample from the model its route selects.
pub fn collect_feedback(
    ctx: &EngineContext<'_>,
    sample: &ScoredSample,
    prompt: &PromptCandidate,
) -> Result<String, GatewayError> {
    let exchange = prompts::feedback_exchange(
        &ctx.config.prompts,
        sample.route,
        &prompt.step_plan,
        &sample.output_text,
        sample.score,
    );
    let role = prompts::feedback_role(sample.route);
    Ok(ctx
        .gateway
        .chat(&exchange, ctx.config.params(role))?
        .trim()
        .to_string())
}

/// Summarizes the feedback of a round, given in sample order.
pub fn summarize_round(
    ctx: &EngineContext<'_>,
    feedbacks: &[String],
) -> Result<String, GatewayError> {
    let exchange = prompts::summarizer_exchange(&ctx.config.prompts, feedbacks);
    Ok(ctx
        .gateway
        .chat(&exchange, ctx.config.params(ModelRole::Summarizer))?
        .trim()
        .to_string())
}

/// Next phase given the state. Budget and target win over the mutation trigger.
pub fn check_transition(state: &EngineState, config: &EngineConfig) -> Phase {
    if state.phase == Phase::Finished {
        return Phase::Finished;
    }
    let target_hit = matches!(
        (config.score_target, state.best.top()),
        (Some(target), Some(best)) if best >= target
    );
    if state.round >= config.max_rounds || target_hit {
        return Phase::Finished;
    }
    if state.phase == Phase::FeedbackLoop {
        let trigger = match config.mutation_trigger {
            MutationTrigger::BestArchiveFull => state.best.is_full(),
            MutationTrigger::AfterRounds(n) => state.round >= n,
            MutationTrigger::Never => false,
        };
        if trigger {
            return Phase::Mutation;
        }
    }
    state.phase
}

/// Actor outputs for `step_plan`, generated in sample order. Sample `i` uses
/// the actor seed offset by `i` so that a seeded live backend does not return
/// the same document for every sample.
pub(crate) fn generate_samples(
    ctx: &EngineContext<'_>,
    step_plan: &str,
) -> Result<Vec<String>, GatewayError> {
    let exchange = prompts::actor_exchange(&ctx.config.prompts, step_plan);
    let base = *ctx.config.params(ModelRole::Actor);
    (0..ctx.config.samples_per_round)
        .map(|i| {
            let params = SamplingParams {
                seed: base.seed.wrapping_add(i as u64),
                ..base
            };
            ctx.gateway.chat(&exchange, &params)
        })
        .collect()
}

/// Samples and scores a prompt. Returns the outputs, their scores and the mean.
pub(crate) fn evaluate_plan(
    ctx: &EngineContext<'_>,
    step_plan: &str,
) -> Result<(Vec<String>, Vec<f64>, f64)> {
    let outputs = generate_samples(ctx, step_plan)?;
    let scores: Vec<f64> = corpus_scores(&outputs, ctx.corpus, ctx.cache, ctx.gateway)?
        .into_iter()
        .map(|s| s.value())
        .collect();
    let mean = order_free_mean(&mut scores.clone());
    Ok((outputs, scores, mean))
}

/// Runs one feedback-loop round against `state` without modifying it.
pub fn run_round(state: &EngineState, ctx: &EngineContext<'_>) -> Result<RoundOutcome> {
    if state.phase != Phase::FeedbackLoop {
        return Err(EngineError::InvalidInput(format!(
            "run_round requires the feedback loop phase, not {}",
            state.phase
        )));
    }
    let current = state.current()?;
    let round = state.round + 1;
    let id = current.id;
    let mut events = vec![EventKind::RoundStarted {
        round,
        candidate_id: id,
    }];

    let (outputs, scores, mean) = evaluate_plan(ctx, &current.step_plan)?;
    for (i, text) in outputs.iter().enumerate() {
        events.push(EventKind::SampleGenerated {
            candidate_id: id,
            sample_index: i,
            text: text.clone(),
        });
    }
    for (i, &score) in scores.iter().enumerate() {
        events.push(EventKind::SampleScored {
            candidate_id: id,
            sample_index: i,
            score,
        });
    }

    // The first threshold is the first round's mean, so it must exist before
    // that round's samples can be routed.
    let threshold = match state.threshold {
        Some(t) => t,
        None => {
            events.push(EventKind::ThresholdUpdated {
                round,
                previous: None,
                threshold: mean,
            });
            mean
        }
    };

    let mut samples = Vec::with_capacity(outputs.len());
    for (i, (text, score)) in outputs.into_iter().zip(scores).enumerate() {
        let mut sample = ScoredSample {
            candidate_id: id,
            sample_index: i,
            output_text: text,
            score,
            route: route_feedback(score, threshold),
            feedback_text: String::new(),
        };
        sample.feedback_text = collect_feedback(ctx, &sample, current)?;
        events.push(EventKind::FeedbackIssued {
            candidate_id: id,
            sample_index: i,
            route: sample.route,
            score,
            threshold,
            feedback: sample.feedback_text.clone(),
        });
        samples.push(sample);
    }

    let feedbacks: Vec<String> = samples.iter().map(|s| s.feedback_text.clone()).collect();
    let summary = summarize_round(ctx, &feedbacks)?;
    events.push(EventKind::RoundSummarized {
        round,
        summary: summary.clone(),
    });

    let mut new_threshold = threshold;
    if let Some(previous) = state.threshold {
        if mean > previous {
            new_threshold = mean;
            events.push(EventKind::ThresholdUpdated {
                round,
                previous: Some(previous),
                threshold: mean,
            });
        }
    }

    let scored = current.with_score(mean);
    let (best, worst) = update_archives(state.best.clone(), state.worst.clone(), &scored);
    events.push(EventKind::ArchivesUpdated {
        round,
        candidate_id: id,
        score: mean,
        best: best.slots(),
        worst: worst.slots(),
    });

    let plan = generate_step_plan(ctx, &state.task_prompt, Some(&summary), &best, &worst)?;
    let next = PromptCandidate {
        id: CandidateId(state.next_candidate_id),
        task_prompt: state.task_prompt.clone(),
        step_plan: plan,
        origin: Origin::Refined,
        round: round + 1,
        score: None,
    };
    events.push(EventKind::PromptRegenerated {
        candidate: next.clone(),
    });

    Ok(RoundOutcome {
        events,
        record: RoundRecord {
            round,
            candidate_id: id,
            samples,
            mean_score: mean,
            threshold: new_threshold,
            summary,
            next_candidate: next,
        },
    })
}
