use std::path::Path;

use super::{
    check_transition, generate_step_plan, run_round, CandidateId, EngineContext, EngineError,
    EngineState, Origin, Phase, PromptCandidate, Result, RoundRecord,
};
use crate::gateway::GatewayError;
use crate::mutation;
use crate::store::{self, EventKind, RunEvent, RunLog, RunManifest};

/// Final state of a run plus its log.
#[derive(Debug)]
pub struct OptimizationResult {
    pub best: PromptCandidate,
    pub state: EngineState,
    /// Rounds executed by this invocation (a resumed run only lists its own).
    pub rounds: Vec<RoundRecord>,
    pub log: RunLog,
}

/// Appends `events` to the log and applies them to the state, then syncs.
pub(crate) fn commit(
    state: &mut EngineState,
    log: &mut RunLog,
    events: Vec<EventKind>,
) -> Result<()> {
    for kind in events {
        let event = RunEvent::new(log.next_seq(), kind);
        log.append(event.clone())?;
        state.apply(&event)?;
    }
    log.sync()?;
    Ok(())
}

/// Runs the whole pipeline from a single task prompt.
///
/// Nothing is written when the backend is unreachable or the initial plan
/// cannot be generated. Later failures leave a resumable log behind.
pub fn run_optimization(
    ctx: &EngineContext<'_>,
    task_prompt: &str,
    log_path: Option<&Path>,
) -> Result<OptimizationResult> {
    ctx.config.validate()?;
    if task_prompt.trim().is_empty() {
        return Err(EngineError::InvalidInput("task prompt is empty".into()));
    }
    let health = ctx.gateway.health_check();
    if !health.is_ok() {
        return Err(GatewayError::Unavailable {
            attempts: 1,
            cause: health.cause.unwrap_or_else(|| "health check failed".into()),
        }
        .into());
    }

    let mut state = EngineState::new(ctx.config);
    let plan = generate_step_plan(ctx, task_prompt, None, &state.best, &state.worst)?;
    let initial = PromptCandidate {
        id: CandidateId(state.next_candidate_id),
        task_prompt: task_prompt.to_string(),
        step_plan: plan,
        origin: Origin::Initial,
        round: 1,
        score: None,
    };

    let manifest = RunManifest::new(
        ctx.config,
        ctx.corpus,
        ctx.gateway.descriptor(),
        task_prompt,
    );
    let mut log = match log_path {
        Some(p) => RunLog::create(p, manifest)?,
        None => RunLog::in_memory(manifest),
    };
    commit(
        &mut state,
        &mut log,
        vec![
            EventKind::RunStarted {
                task_prompt: task_prompt.to_string(),
                seed: ctx.config.seed,
            },
            EventKind::PromptRegenerated { candidate: initial },
        ],
    )?;
    drive(ctx, state, log)
}

/// Continues an interrupted run from its log file.
pub fn resume_optimization(ctx: &EngineContext<'_>, log_path: &Path) -> Result<OptimizationResult> {
    ctx.config.validate()?;
    let (state, log) = store::resume(log_path, ctx.config, ctx.corpus)?;
    drive(ctx, state, log)
}

fn drive(
    ctx: &EngineContext<'_>,
    mut state: EngineState,
    mut log: RunLog,
) -> Result<OptimizationResult> {
    let mut rounds = Vec::new();
    loop {
        match state.phase {
            Phase::FeedbackLoop => {
                let next = check_transition(&state, ctx.config);
                if next != Phase::FeedbackLoop {
                    let transition = EventKind::PhaseTransition {
                        from: state.phase,
                        to: next,
                        round: state.round,
                    };
                    commit(&mut state, &mut log, vec![transition])?;
                    continue;
                }
                match run_round(&state, ctx) {
                    Ok(outcome) => {
                        commit(&mut state, &mut log, outcome.events)?;
                        rounds.push(outcome.record);
                    }
                    Err(err) => {
                        let round = state.round + 1;
                        log::error!("round {round} failed: {err}");
                        let failure = EventKind::BackendFailure {
                            phase: Phase::FeedbackLoop,
                            context: format!("round {round}"),
                            cause: err.to_string(),
                        };
                        commit(&mut state, &mut log, vec![failure])?;
                        return Err(EngineError::RoundAborted {
                            round,
                            cause: err.to_string(),
                        });
                    }
                }
            }
            Phase::Mutation => {
                state = mutation::run_mutation_phase(state, ctx, &mut log)?;
            }
            Phase::Finished => {
                let best = state.best_candidate().ok_or_else(|| {
                    EngineError::Replay("finished without any scored prompt".into())
                })?;
                if !state.run_finished {
                    commit(
                        &mut state,
                        &mut log,
                        vec![EventKind::RunFinished {
                            best_candidate: best.clone(),
                        }],
                    )?;
                }
                return Ok(OptimizationResult {
                    best,
                    state,
                    rounds,
                    log,
                });
            }
        }
    }
}
