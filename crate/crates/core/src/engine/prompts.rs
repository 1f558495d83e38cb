//! System prompts and the fixed message templates for every role.
//!
//! Templates put the variable, role-specific payload in the final user turn
//! so that the mock backend's echo fallback stays bounded in size.

use serde::{Deserialize, Serialize};

use super::{PromptArchive, Route};
use crate::gateway::{ChatExchange, ChatMessage, ModelRole};

pub const PROMPTING_SYSTEM: &str =
    "You write step-by-step instructions for a text generation model. \
Given a task, turn it into a clear, numbered, actionable prompt that tells the model exactly \
what document to produce and how. When feedback or earlier prompts with their similarity \
scores are provided, keep what worked in high-scoring prompts, avoid what failed in \
low-scoring prompts, and address the feedback. Reply with the new prompt only.";

pub const ACTOR_SYSTEM: &str = "Follow the user's instructions exactly and produce the requested \
document. Reply with the document only.";

pub const DIAGNOSTIC_SYSTEM: &str = "You review a generated document that is not yet similar \
enough to real documents of its kind. Identify concrete weaknesses in content, structure, \
terminology and style, and state specific changes to the prompt that would fix them. Be brief.";

pub const GENERAL_SYSTEM: &str = "You review a generated document that is already similar to \
real documents of its kind. Name the elements of the prompt and output that made it \
successful and should be preserved or reinforced. Be brief.";

pub const SUMMARIZER_SYSTEM: &str = "You receive feedback on several documents generated from \
the same prompt. Aggregate it into one short list of the most common problems and strengths, \
ordered by importance. Reply with the summary only.";

pub const MUTATOR_SYSTEM: &str = "Rephrase the sentence sent by the user so that its meaning is \
preserved exactly. Reply with exactly one rephrased sentence and nothing else.";

/// Configurable system prompt per role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemPrompts {
    pub prompting: String,
    pub actor: String,
    pub diagnostic_feedback: String,
    pub general_feedback: String,
    pub summarizer: String,
    pub mutator: String,
}

impl Default for SystemPrompts {
    fn default() -> Self {
        Self {
            prompting: PROMPTING_SYSTEM.into(),
            actor: ACTOR_SYSTEM.into(),
            diagnostic_feedback: DIAGNOSTIC_SYSTEM.into(),
            general_feedback: GENERAL_SYSTEM.into(),
            summarizer: SUMMARIZER_SYSTEM.into(),
            mutator: MUTATOR_SYSTEM.into(),
        }
    }
}

impl SystemPrompts {
    pub fn get(&self, role: ModelRole) -> &str {
        match role {
            ModelRole::Prompting => &self.prompting,
            ModelRole::Actor => &self.actor,
            ModelRole::DiagnosticFeedback => &self.diagnostic_feedback,
            ModelRole::GeneralFeedback => &self.general_feedback,
            ModelRole::Summarizer => &self.summarizer,
            ModelRole::Mutator => &self.mutator,
        }
    }
}

/// Canonical decimal rendering of a score (shortest round-trip form).
pub fn format_score(score: f64) -> String {
    serde_json::to_string(&score).expect("finite scores serialize")
}

fn archive_listing(out: &mut String, title: &str, archive: &PromptArchive) {
    out.push_str(title);
    out.push('\n');
    for (i, e) in archive.entries().iter().enumerate() {
        out.push_str(&format!(
            "[{}] score {}\n{}\n\n",
            i + 1,
            format_score(e.score),
            e.candidate.step_plan
        ));
    }
}

/// Prompting-model request.
///
/// Without feedback or archived prompts the request is the task alone.
/// Otherwise the archives go into a leading user turn (best, then worst),
/// acknowledged by an assistant turn, and the final turn carries the task
/// followed by the feedback summary.
pub fn prompting_exchange(
    prompts: &SystemPrompts,
    task_prompt: &str,
    feedback_summary: Option<&str>,
    best: &PromptArchive,
    worst: &PromptArchive,
) -> ChatExchange {
    let mut messages = Vec::new();
    if !(best.is_empty() && worst.is_empty()) {
        let mut listing = String::new();
        archive_listing(&mut listing, "Highest-scoring prompts so far:", best);
        archive_listing(&mut listing, "Lowest-scoring prompts so far:", worst);
        messages.push(ChatMessage::user(listing.trim_end()));
        messages.push(ChatMessage::assistant("Noted."));
    }
    let last = match feedback_summary {
        Some(summary) => format!("{task_prompt}\n\nFeedback summary:\n{summary}"),
        None => task_prompt.to_string(),
    };
    messages.push(ChatMessage::user(last));
    ChatExchange::new(
        ModelRole::Prompting,
        prompts.get(ModelRole::Prompting),
        messages,
    )
    .expect("template ends on a user turn")
}

pub fn actor_exchange(prompts: &SystemPrompts, step_plan: &str) -> ChatExchange {
    ChatExchange::single(ModelRole::Actor, prompts.get(ModelRole::Actor), step_plan)
}

pub fn feedback_role(route: Route) -> ModelRole {
    match route {
        Route::Diagnostic => ModelRole::DiagnosticFeedback,
        Route::General => ModelRole::GeneralFeedback,
    }
}

pub fn feedback_exchange(
    prompts: &SystemPrompts,
    route: Route,
    step_plan: &str,
    output: &str,
    score: f64,
) -> ChatExchange {
    let role = feedback_role(route);
    let body = format!(
        "Prompt:\n{step_plan}\n\nGenerated output:\n{output}\n\nSimilarity score: {}",
        format_score(score)
    );
    ChatExchange::single(role, prompts.get(role), body)
}

pub fn summarizer_exchange(prompts: &SystemPrompts, feedbacks: &[String]) -> ChatExchange {
    let body = feedbacks
        .iter()
        .enumerate()
        .map(|(i, f)| format!("Feedback {}:\n{f}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n");
    ChatExchange::single(
        ModelRole::Summarizer,
        prompts.get(ModelRole::Summarizer),
        body,
    )
}

pub fn mutator_exchange(prompts: &SystemPrompts, sentence: &str) -> ChatExchange {
    ChatExchange::single(
        ModelRole::Mutator,
        prompts.get(ModelRole::Mutator),
        sentence,
    )
}
