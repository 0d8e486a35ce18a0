use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EntryId, EntryStatus, KnowledgeEntry, PruneReason, RoundRecord};

/// Character/4 token estimate used for every budget check.
pub fn token_proxy(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnowledgeError {
    #[error("unknown knowledge entry {0}")]
    Unknown(EntryId),
    #[error("knowledge entry {0} is already pruned")]
    AlreadyPruned(EntryId),
    #[error("knowledge entry id {0} reused")]
    Reused(EntryId),
}

/// Ordered list of distilled "don't" constraints plus, for integer-answer
/// problems, the set of answers the loop has already rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeList {
    entries: Vec<KnowledgeEntry>,
    rejected_answers: BTreeSet<u16>,
    next_id: u32,
}

impl KnowledgeList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn active(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.entries
            .iter()
            .filter(|e| e.status == EntryStatus::Active)
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    pub fn get(&self, id: EntryId) -> Option<&KnowledgeEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn rejected_answers(&self) -> &BTreeSet<u16> {
        &self.rejected_answers
    }

    pub fn is_empty(&self) -> bool {
        self.active_count() == 0 && self.rejected_answers.is_empty()
    }

    /// Text injected into prompts. Empty when nothing has been learned yet.
    pub fn render(&self) -> String {
        if self.is_empty() {
            return String::new();
        }
        let mut out = String::from("## Empirical Mistakes List");
        if !self.rejected_answers.is_empty() {
            let answers: Vec<String> = self.rejected_answers.iter().map(u16::to_string).collect();
            out.push_str("\nPreviously self-rejected answers: ");
            out.push_str(&answers.join(", "));
        }
        for entry in self.active() {
            out.push_str(&format!("\n- [{}] {}", entry.id, entry.text));
        }
        out
    }

    pub fn token_len(&self) -> usize {
        token_proxy(&self.render())
    }

    /// Appends an Active entry with a fresh id and returns a copy of it.
    pub fn add(&mut self, text: impl Into<String>, round: u32) -> KnowledgeEntry {
        self.next_id += 1;
        let entry = KnowledgeEntry {
            id: EntryId(self.next_id),
            text: text.into(),
            round_added: round,
            category: None,
            status: EntryStatus::Active,
            pruned_in_round: None,
            prune_reason: None,
        };
        self.entries.push(entry.clone());
        entry
    }

    pub fn prune(
        &mut self,
        id: EntryId,
        round: u32,
        reason: PruneReason,
    ) -> Result<(), KnowledgeError> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or(KnowledgeError::Unknown(id))?;
        if entry.status == EntryStatus::Pruned {
            return Err(KnowledgeError::AlreadyPruned(id));
        }
        entry.status = EntryStatus::Pruned;
        entry.pruned_in_round = Some(round);
        entry.prune_reason = Some(reason);
        Ok(())
    }

    /// Returns true when the answer was not already rejected.
    pub fn reject_answer(&mut self, answer: u16) -> bool {
        self.rejected_answers.insert(answer)
    }

    /// Prunes oldest Active entries until the rendered list fits in
    /// `max_tokens`. Returns the evicted ids in eviction order.
    pub fn enforce_cap(&mut self, max_tokens: usize, round: u32) -> Vec<EntryId> {
        let mut evicted = Vec::new();
        while self.token_len() > max_tokens {
            let Some(oldest) = self.active().next().map(|e| e.id) else {
                break;
            };
            self.prune(oldest, round, PruneReason::CapEnforcement)
                .expect("oldest active entry exists");
            evicted.push(oldest);
        }
        evicted
    }

    /// Re-applies a recorded round on top of this list. Used to rebuild
    /// state when resuming from a trace.
    pub fn replay(&mut self, record: &RoundRecord) -> Result<(), KnowledgeError> {
        for entry in &record.insights_added {
            if self.get(entry.id).is_some() || entry.id.0 <= self.next_id {
                return Err(KnowledgeError::Reused(entry.id));
            }
            let mut entry = entry.clone();
            entry.status = EntryStatus::Active;
            entry.pruned_in_round = None;
            entry.prune_reason = None;
            self.next_id = entry.id.0;
            self.entries.push(entry);
        }
        for p in &record.pruned {
            self.prune(p.entry, record.round, p.reason)?;
        }
        for a in &record.rejected_added {
            self.rejected_answers.insert(*a);
        }
        Ok(())
    }
}
