//! Guided mutation of high-scoring prompts.
//!
//! A prompt is picked from the best archive, split into sentences, and one
//! sentence is rephrased by the mutator model. The mutant is re-evaluated and
//! replaces the weakest best-archive entry only if it strictly beats it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{
    check_transition, commit, evaluate_plan, prompts, CandidateId, EngineContext, EngineError,
    EngineState, Offer, Origin, Phase, PromptCandidate,
};
use crate::gateway::{GatewayError, ModelRole};
use crate::store::{EventKind, RunLog};

#[derive(Debug, Error)]
pub enum MutationError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("mutation of sentence {sentence_index} rejected: {reason}")]
    Rejected {
        sentence_index: usize,
        reason: String,
    },
    #[error("mutator call for sentence {sentence_index} failed: {source}")]
    Backend {
        sentence_index: usize,
        #[source]
        source: GatewayError,
    },
}

/// A text split into sentences; joined back with single spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSegmentation {
    sentences: Vec<String>,
}

impl SentenceSegmentation {
    pub const JOINER: &'static str = " ";

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn join(&self) -> String {
        self.sentences.join(Self::JOINER)
    }

    /// Copy with slot `index` holding `text`.
    pub fn replace(&self, index: usize, text: impl Into<String>) -> Self {
        let mut sentences = self.sentences.clone();
        sentences[index] = text.into();
        Self { sentences }
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_ascii_digit()
}

/// Splits after `.`, `!` or `?` when followed by whitespace and then an
/// uppercase letter or a digit. Terminators stay with their sentence.
///
/// There is no abbreviation handling: "Dr. Meier" splits after "Dr.".
pub fn segment_sentences(text: &str) -> Result<SentenceSegmentation, MutationError> {
    if text.trim().is_empty() {
        return Err(MutationError::DegenerateInput(
            "cannot segment an empty text".into(),
        ));
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for (k, &(pos, c)) in chars.iter().enumerate() {
        if !is_terminator(c) {
            continue;
        }
        let mut j = k + 1;
        if j >= chars.len() || !chars[j].1.is_whitespace() {
            continue;
        }
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        if j < chars.len() && starts_sentence(chars[j].1) {
            let end = pos + c.len_utf8();
            let sentence = text[start..end].trim();
            if !sentence.is_empty() {
                sentences.push(sentence.to_string());
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    Ok(SentenceSegmentation { sentences })
}

/// Result of rewriting one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Mutation {
    pub parent_id: CandidateId,
    pub sentence_index: usize,
    pub original: SentenceSegmentation,
    pub mutated: SentenceSegmentation,
    pub candidate: PromptCandidate,
}

/// Rewrites one uniformly chosen sentence of `candidate` with the mutator.
pub fn mutate_once(
    candidate: &PromptCandidate,
    rng: &mut ChaCha8Rng,
    ctx: &EngineContext<'_>,
    new_id: CandidateId,
    round: u32,
) -> Result<Mutation, MutationError> {
    let original = segment_sentences(&candidate.step_plan)?;
    let sentence_index = rng.gen_range(0..original.len());
    let exchange =
        prompts::mutator_exchange(&ctx.config.prompts, &original.sentences[sentence_index]);
    let reply = match ctx
        .gateway
        .chat(&exchange, ctx.config.params(ModelRole::Mutator))
    {
        Ok(reply) => reply.trim().to_string(),
        Err(GatewayError::EmptyResponse(_)) => String::new(),
        Err(source) => {
            return Err(MutationError::Backend {
                sentence_index,
                source,
            })
        }
    };
    if reply.is_empty() {
        return Err(MutationError::Rejected {
            sentence_index,
            reason: "mutator returned an empty rewrite".into(),
        });
    }
    let mutated = original.replace(sentence_index, reply);
    Ok(Mutation {
        parent_id: candidate.id,
        sentence_index,
        candidate: PromptCandidate {
            id: new_id,
            task_prompt: candidate.task_prompt.clone(),
            step_plan: mutated.join(),
            origin: Origin::Mutated,
            round,
            score: None,
        },
        original,
        mutated,
    })
}

/// Events of the next mutation iteration. Never fails: problems become
/// `MutationRejected` or `BackendFailure` events.
pub fn mutation_iteration(state: &EngineState, ctx: &EngineContext<'_>) -> Vec<EventKind> {
    let iteration = state.mutation_iteration;
    let failure = |cause: String| {
        log::warn!("mutation iteration {iteration} failed: {cause}");
        vec![EventKind::BackendFailure {
            phase: Phase::Mutation,
            context: format!("mutation iteration {iteration}"),
            cause,
        }]
    };
    let mut rng = state.mutation_rng();
    let entries = state.best.entries();
    let archive_index = rng.gen_range(0..entries.len());
    let parent = &entries[archive_index].candidate;
    let mutation = match mutate_once(
        parent,
        &mut rng,
        ctx,
        CandidateId(state.next_candidate_id),
        state.round,
    ) {
        Ok(m) => m,
        Err(MutationError::Backend { source, .. }) => return failure(source.to_string()),
        Err(e @ MutationError::Rejected { sentence_index, .. }) => {
            return vec![EventKind::MutationRejected {
                iteration,
                parent_id: parent.id,
                sentence_index: Some(sentence_index),
                reason: e.to_string(),
            }]
        }
        Err(e @ MutationError::DegenerateInput(_)) => {
            return vec![EventKind::MutationRejected {
                iteration,
                parent_id: parent.id,
                sentence_index: None,
                reason: e.to_string(),
            }]
        }
    };
    let (outputs, scores, mean) = match evaluate_plan(ctx, &mutation.candidate.step_plan) {
        Ok(r) => r,
        Err(e) => return failure(e.to_string()),
    };
    let id = mutation.candidate.id;
    let mut events = Vec::with_capacity(2 * outputs.len() + 1);
    for (i, text) in outputs.into_iter().enumerate() {
        events.push(EventKind::SampleGenerated {
            candidate_id: id,
            sample_index: i,
            text,
        });
    }
    for (i, score) in scores.into_iter().enumerate() {
        events.push(EventKind::SampleScored {
            candidate_id: id,
            sample_index: i,
            score,
        });
    }
    let scored = mutation.candidate.with_score(mean);
    let mut best = state.best.clone();
    let offer = best.offer(&scored);
    events.push(EventKind::MutationApplied {
        iteration,
        parent_id: mutation.parent_id,
        archive_index,
        sentence_index: mutation.sentence_index,
        candidate: scored,
        accepted: offer.accepted(),
        replaced: match offer {
            Offer::Replaced(old) => Some(old),
            _ => None,
        },
        best: best.slots(),
    });
    events
}

/// Runs mutation iterations until the budget (or a finishing condition) is
/// reached, then moves the run to the finished phase.
pub fn run_mutation_phase(
    mut state: EngineState,
    ctx: &EngineContext<'_>,
    log: &mut RunLog,
) -> Result<EngineState, EngineError> {
    if state.phase != Phase::Mutation {
        return Err(EngineError::InvalidInput(format!(
            "mutation phase requested while in {}",
            state.phase
        )));
    }
    if state.best.is_empty() {
        return Err(EngineError::InvalidInput(
            "mutation phase needs at least one archived prompt".into(),
        ));
    }
    loop {
        let done = state.mutation_iteration >= ctx.config.mutation_budget
            || check_transition(&state, ctx.config) == Phase::Finished;
        if done {
            let transition = EventKind::PhaseTransition {
                from: Phase::Mutation,
                to: Phase::Finished,
                round: state.round,
            };
            commit(&mut state, log, vec![transition])?;
            return Ok(state);
        }
        let events = mutation_iteration(&state, ctx);
        commit(&mut state, log, events)?;
    }
}
