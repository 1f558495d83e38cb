//! Bounded best/worst prompt archives.

use serde::{Deserialize, Serialize};

use super::{CandidateId, PromptCandidate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveKind {
    /// Keeps the highest scores.
    Best,
    /// Keeps the lowest scores.
    Worst,
}

/// A scored archive member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub candidate: PromptCandidate,
    pub score: f64,
}

/// Compact `(id, score)` view of an entry, as written to the run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSlot {
    pub candidate_id: CandidateId,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offer {
    /// Archive was not full yet.
    Inserted,
    /// The weakest entry was evicted.
    Replaced(CandidateId),
    Rejected,
}

impl Offer {
    pub fn accepted(self) -> bool {
        !matches!(self, Offer::Rejected)
    }
}

/// At most `capacity` candidates with the most extreme scores seen so far.
///
/// Entries are kept in rank order: strongest first, ties broken by arrival
/// (candidate id). A newcomer must strictly beat the weakest entry to get in,
/// so on ties the incumbent stays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptArchive {
    kind: ArchiveKind,
    capacity: usize,
    entries: Vec<ArchiveEntry>,
}

impl PromptArchive {
    pub fn new(kind: ArchiveKind, capacity: usize) -> Self {
        assert!(capacity >= 1, "archive capacity must be positive");
        Self {
            kind,
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn best(capacity: usize) -> Self {
        Self::new(ArchiveKind::Best, capacity)
    }

    pub fn worst(capacity: usize) -> Self {
        Self::new(ArchiveKind::Worst, capacity)
    }

    pub fn kind(&self) -> ArchiveKind {
        self.kind
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    /// Entries in rank order.
    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn slots(&self) -> Vec<ArchiveSlot> {
        self.entries
            .iter()
            .map(|e| ArchiveSlot {
                candidate_id: e.candidate.id,
                score: e.score,
            })
            .collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// Most extreme score (maximum for best, minimum for worst).
    pub fn top(&self) -> Option<f64> {
        self.entries.first().map(|e| e.score)
    }

    /// The score a newcomer has to beat once the archive is full.
    pub fn floor(&self) -> Option<f64> {
        self.entries.last().map(|e| e.score)
    }

    fn beats(&self, a: f64, b: f64) -> bool {
        match self.kind {
            ArchiveKind::Best => a > b,
            ArchiveKind::Worst => a < b,
        }
    }

    /// Whether a candidate scoring `score` would be admitted.
    pub fn would_accept(&self, score: f64) -> bool {
        match self.floor() {
            _ if !self.is_full() => true,
            Some(floor) => self.beats(score, floor),
            None => true,
        }
    }

    /// Offers a scored candidate to the archive.
    pub fn offer(&mut self, candidate: &PromptCandidate) -> Offer {
        let score = candidate
            .score
            .expect("only scored candidates enter an archive");
        if !self.would_accept(score) {
            return Offer::Rejected;
        }
        let outcome = if self.is_full() {
            let evicted = self.entries.pop().expect("full archive is non-empty");
            Offer::Replaced(evicted.candidate.id)
        } else {
            Offer::Inserted
        };
        let entry = ArchiveEntry {
            candidate: candidate.clone(),
            score,
        };
        let pos = self
            .entries
            .iter()
            .position(|e| self.ranks_before(&entry, e))
            .unwrap_or(self.entries.len());
        self.entries.insert(pos, entry);
        outcome
    }

    fn ranks_before(&self, a: &ArchiveEntry, b: &ArchiveEntry) -> bool {
        self.beats(a.score, b.score) || (a.score == b.score && a.candidate.id < b.candidate.id)
    }
}

/// Offers `candidate` to both archives.
pub fn update_archives(
    mut best: PromptArchive,
    mut worst: PromptArchive,
    candidate: &PromptCandidate,
) -> (PromptArchive, PromptArchive) {
    best.offer(candidate);
    worst.offer(candidate);
    (best, worst)
}
