use serde::{Deserialize, Serialize};

use crate::engine::{ArchiveSlot, CandidateId, Phase, PromptCandidate, Route};

/// One line of the run log. `tick` is a logical clock equal to `seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub seq: u64,
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl RunEvent {
    pub fn new(seq: u64, kind: EventKind) -> Self {
        Self {
            seq,
            tick: seq,
            kind,
        }
    }

    /// Canonical single-line JSON encoding.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    RunStarted {
        task_prompt: String,
        seed: u64,
    },
    RoundStarted {
        round: u32,
        candidate_id: CandidateId,
    },
    SampleGenerated {
        candidate_id: CandidateId,
        sample_index: usize,
        text: String,
    },
    SampleScored {
        candidate_id: CandidateId,
        sample_index: usize,
        score: f64,
    },
    FeedbackIssued {
        candidate_id: CandidateId,
        sample_index: usize,
        route: Route,
        score: f64,
        threshold: f64,
        feedback: String,
    },
    RoundSummarized {
        round: u32,
        summary: String,
    },
    ThresholdUpdated {
        round: u32,
        previous: Option<f64>,
        threshold: f64,
    },
    ArchivesUpdated {
        round: u32,
        candidate_id: CandidateId,
        score: f64,
        best: Vec<ArchiveSlot>,
        worst: Vec<ArchiveSlot>,
    },
    PromptRegenerated {
        candidate: PromptCandidate,
    },
    PhaseTransition {
        from: Phase,
        to: Phase,
        round: u32,
    },
    MutationApplied {
        iteration: u32,
        parent_id: CandidateId,
        archive_index: usize,
        sentence_index: usize,
        candidate: PromptCandidate,
        accepted: bool,
        replaced: Option<CandidateId>,
        best: Vec<ArchiveSlot>,
    },
    MutationRejected {
        iteration: u32,
        parent_id: CandidateId,
        sentence_index: Option<usize>,
        reason: String,
    },
    BackendFailure {
        phase: Phase,
        context: String,
        cause: String,
    },
    RunFinished {
        best_candidate: PromptCandidate,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::RunStarted { .. } => "RunStarted",
            EventKind::RoundStarted { .. } => "RoundStarted",
            EventKind::SampleGenerated { .. } => "SampleGenerated",
            EventKind::SampleScored { .. } => "SampleScored",
            EventKind::FeedbackIssued { .. } => "FeedbackIssued",
            EventKind::RoundSummarized { .. } => "RoundSummarized",
            EventKind::ThresholdUpdated { .. } => "ThresholdUpdated",
            EventKind::ArchivesUpdated { .. } => "ArchivesUpdated",
            EventKind::PromptRegenerated { .. } => "PromptRegenerated",
            EventKind::PhaseTransition { .. } => "PhaseTransition",
            EventKind::MutationApplied { .. } => "MutationApplied",
            EventKind::MutationRejected { .. } => "MutationRejected",
            EventKind::BackendFailure { .. } => "BackendFailure",
            EventKind::RunFinished { .. } => "RunFinished",
        }
    }

    /// Whether this event closes an atomically committed batch. A log cut
    /// anywhere else is rolled back to the previous closing event on resume.
    pub fn closes_batch(&self) -> bool {
        matches!(
            self,
            EventKind::PromptRegenerated { .. }
                | EventKind::PhaseTransition { .. }
                | EventKind::MutationApplied { .. }
                | EventKind::MutationRejected { .. }
                | EventKind::BackendFailure { .. }
                | EventKind::RunFinished { .. }
        )
    }
}
