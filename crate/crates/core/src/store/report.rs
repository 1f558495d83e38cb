use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_log, EventKind, LoadedLog, StoreError};
use crate::engine::{ArchiveSlot, CandidateId, Phase, Route};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!(
                "unknown report format {other:?} (expected json or markdown)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub candidate_id: CandidateId,
    pub mean_score: f64,
    /// Threshold in force after the round.
    pub threshold: f64,
    /// Best-archive maximum after the round.
    pub best_score: f64,
    pub diagnostic: usize,
    pub general: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub task_prompt: String,
    pub rounds: Vec<RoundReport>,
    pub threshold_trajectory: Vec<f64>,
    pub best_candidate_id: Option<CandidateId>,
    pub best_prompt: Option<String>,
    pub best_score: Option<f64>,
    pub mutations_attempted: usize,
    pub mutations_accepted: usize,
    pub mutations_rejected: usize,
    pub backend_failures: usize,
    pub phase: Phase,
    pub finished: bool,
}

/// Projects a log onto its report.
pub fn build_report(log: &LoadedLog) -> Result<RunReport, StoreError> {
    let mut report = RunReport {
        run_id: log.manifest.run_id.clone(),
        task_prompt: String::new(),
        rounds: Vec::new(),
        threshold_trajectory: Vec::new(),
        best_candidate_id: None,
        best_prompt: None,
        best_score: None,
        mutations_attempted: 0,
        mutations_accepted: 0,
        mutations_rejected: 0,
        backend_failures: 0,
        phase: Phase::FeedbackLoop,
        finished: false,
    };
    if log.events.is_empty() {
        return Err(StoreError::Empty);
    }
    let mut plans: HashMap<CandidateId, String> = HashMap::new();
    let mut threshold: Option<f64> = None;
    let mut routes = (0usize, 0usize);
    let mut best: Vec<ArchiveSlot> = Vec::new();

    for event in &log.events {
        match &event.kind {
            EventKind::RunStarted { task_prompt, .. } => report.task_prompt = task_prompt.clone(),
            EventKind::RoundStarted { .. } => routes = (0, 0),
            EventKind::FeedbackIssued { route, .. } => match route {
                Route::Diagnostic => routes.0 += 1,
                Route::General => routes.1 += 1,
            },
            EventKind::ThresholdUpdated { threshold: t, .. } => threshold = Some(*t),
            EventKind::ArchivesUpdated {
                round,
                candidate_id,
                score,
                best: slots,
                ..
            } => {
                best = slots.clone();
                let t = threshold.ok_or_else(|| StoreError::Corrupt {
                    line: event.seq as usize + 1,
                    reason: "round completed without a threshold".into(),
                })?;
                report.rounds.push(RoundReport {
                    round: *round,
                    candidate_id: *candidate_id,
                    mean_score: *score,
                    threshold: t,
                    best_score: best.first().map_or(*score, |s| s.score),
                    diagnostic: routes.0,
                    general: routes.1,
                });
                report.threshold_trajectory.push(t);
            }
            EventKind::PromptRegenerated { candidate } => {
                plans.insert(candidate.id, candidate.step_plan.clone());
            }
            EventKind::PhaseTransition { to, .. } => report.phase = *to,
            EventKind::MutationApplied {
                candidate,
                accepted,
                best: slots,
                ..
            } => {
                plans.insert(candidate.id, candidate.step_plan.clone());
                report.mutations_attempted += 1;
                if *accepted {
                    report.mutations_accepted += 1;
                }
                best = slots.clone();
            }
            EventKind::MutationRejected { .. } => {
                report.mutations_attempted += 1;
                report.mutations_rejected += 1;
            }
            EventKind::BackendFailure { .. } => report.backend_failures += 1,
            EventKind::RunFinished { best_candidate } => {
                report.finished = true;
                report.best_candidate_id = Some(best_candidate.id);
                report.best_prompt = Some(best_candidate.step_plan.clone());
                report.best_score = best_candidate.score;
            }
            EventKind::SampleGenerated { .. }
            | EventKind::SampleScored { .. }
            | EventKind::RoundSummarized { .. } => {}
        }
    }
    if !report.finished {
        if let Some(top) = best.first() {
            report.best_candidate_id = Some(top.candidate_id);
            report.best_prompt = plans.get(&top.candidate_id).cloned();
            report.best_score = Some(top.score);
        }
    }
    Ok(report)
}

pub fn render_markdown(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Optimization run `{}`\n", report.run_id);
    let _ = writeln!(out, "**Task prompt:** {}\n", report.task_prompt);
    let status = if report.finished {
        "finished"
    } else {
        "incomplete"
    };
    let _ = writeln!(out, "**Status:** {status} (phase `{}`)\n", report.phase);
    let _ = writeln!(out, "## Rounds\n");
    let _ = writeln!(
        out,
        "| Round | Candidate | Mean score | Threshold | Best score | Diagnostic | General |"
    );
    let _ = writeln!(out, "|---:|---|---:|---:|---:|---:|---:|");
    for r in &report.rounds {
        let _ = writeln!(
            out,
            "| {} | {} | {:.6} | {:.6} | {:.6} | {} | {} |",
            r.round,
            r.candidate_id,
            r.mean_score,
            r.threshold,
            r.best_score,
            r.diagnostic,
            r.general
        );
    }
    let _ = writeln!(out, "\n## Mutation phase\n");
    let _ = writeln!(
        out,
        "{} attempted, {} accepted, {} rejected. Backend failures: {}.",
        report.mutations_attempted,
        report.mutations_accepted,
        report.mutations_rejected,
        report.backend_failures
    );
    let _ = writeln!(out, "\n## Best prompt\n");
    match (
        &report.best_prompt,
        report.best_score,
        report.best_candidate_id,
    ) {
        (Some(prompt), Some(score), Some(id)) => {
            let _ = writeln!(out, "Candidate {id}, score {score:.6}\n");
            let _ = writeln!(out, "```text\n{prompt}\n```");
        }
        _ => {
            let _ = writeln!(out, "No prompt has been scored yet.");
        }
    }
    out
}

/// Reads a log and renders its report.
pub fn emit_report(log_path: &Path, format: ReportFormat) -> Result<String, StoreError> {
    let log = read_log(log_path)?;
    let report = build_report(&log)?;
    Ok(match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => render_markdown(&report),
    })
}
