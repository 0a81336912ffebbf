//! Labeled-dataset loading and multi-annotation label resolution.

use std::collections::BTreeSet;
use std::path::Path;

use crate::corpus::format::{read_erc_records, ErcRecord, ErcUtteranceRecord};
use crate::corpus::{Conversation, Utterance};
use crate::error::{Error, Result};

/// Class assigned when annotations exist but no emotion received a vote.
pub const OTHER_LABEL: &str = "other";

/// Outcome of resolving one utterance's annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedLabel {
    Class(String),
    /// No annotation at all: the utterance is removed.
    Dropped,
}

/// Resolve an utterance's annotations to a single class.
///
/// - a plain `label` passes through;
/// - absent annotations drop the utterance;
/// - `labels`/`intensities` lists count one vote per entry with positive
///   intensity: most votes wins, vote ties go to the larger intensity sum
///   (then lexicographically smallest name for determinism), and zero votes
///   for every class resolves to [`OTHER_LABEL`].
pub fn resolve_labels(record: &ErcUtteranceRecord, record_index: usize) -> Result<ResolvedLabel> {
    if let Some(label) = &record.label {
        return Ok(ResolvedLabel::Class(label.clone()));
    }
    let (labels, intensities) = match (&record.labels, &record.intensities) {
        (None, None) => return Ok(ResolvedLabel::Dropped),
        (Some(l), Some(i)) => (l, i),
        _ => {
            return Err(Error::SchemaViolation {
                record: record_index,
                reason: "labels and intensities must appear together".into(),
            })
        }
    };
    if labels.len() != intensities.len() {
        return Err(Error::SchemaViolation {
            record: record_index,
            reason: format!(
                "labels/intensities lengths differ: {} vs {}",
                labels.len(),
                intensities.len()
            ),
        });
    }
    let mut tally: std::collections::HashMap<&str, (usize, f64)> = Default::default();
    for (label, &intensity) in labels.iter().zip(intensities) {
        if intensity > 0.0 {
            let entry = tally.entry(label.as_str()).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += intensity;
        }
    }
    if tally.is_empty() {
        return Ok(ResolvedLabel::Class(OTHER_LABEL.to_string()));
    }
    let winner = tally
        .into_iter()
        .max_by(|(name_a, (votes_a, sum_a)), (name_b, (votes_b, sum_b))| {
            votes_a
                .cmp(votes_b)
                .then(sum_a.partial_cmp(sum_b).expect("finite intensities"))
                .then(name_b.cmp(name_a))
        })
        .map(|(name, _)| name.to_string())
        .expect("non-empty tally");
    Ok(ResolvedLabel::Class(winner))
}

/// A loaded classification dataset: conversations with label ids plus the
/// sorted class-name list those ids index into.
#[derive(Debug, Clone, PartialEq)]
pub struct ErcDataset {
    pub conversations: Vec<Conversation>,
    pub labels: Vec<String>,
}

impl ErcDataset {
    pub fn label_id(&self, name: &str) -> Option<u32> {
        self.labels.iter().position(|l| l == name).map(|i| i as u32)
    }

    pub fn utterance_count(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    /// Per-class utterance counts across the given conversations.
    pub fn label_counts(&self, conversations: &[Conversation]) -> Vec<u64> {
        let mut counts = vec![0u64; self.labels.len()];
        for conv in conversations {
            for utt in &conv.utterances {
                if let Some(label) = utt.label {
                    counts[label as usize] += 1;
                }
            }
        }
        counts
    }

    /// Re-index every label against a target class list (usually a trained
    /// model's). Labels the target does not know are an error naming the
    /// offending record.
    pub fn remap_labels(&self, target: &[String]) -> Result<ErcDataset> {
        let mut conversations = self.conversations.clone();
        for (index, conv) in conversations.iter_mut().enumerate() {
            for utt in &mut conv.utterances {
                if let Some(old) = utt.label {
                    let name = &self.labels[old as usize];
                    let new = target.iter().position(|l| l == name).ok_or_else(|| {
                        Error::UnknownLabel {
                            label: name.clone(),
                            record: index + 1,
                            known: target.to_vec(),
                        }
                    })?;
                    utt.label = Some(new as u32);
                }
            }
        }
        Ok(ErcDataset {
            conversations,
            labels: target.to_vec(),
        })
    }
}

/// Convert raw records to a dataset: resolve labels, drop unannotated
/// utterances and then empty conversations, and build the class list
/// (lexicographically sorted for stable ids).
pub fn dataset_from_records(records: &[ErcRecord]) -> Result<ErcDataset> {
    type Kept = Vec<(ErcUtteranceRecord, String)>;
    let mut resolved: Vec<(Option<u64>, Kept)> = Vec::new();
    let mut names: BTreeSet<String> = BTreeSet::new();
    for (index, record) in records.iter().enumerate() {
        let mut kept = Vec::new();
        for utt in &record.utterances {
            match resolve_labels(utt, index + 1)? {
                ResolvedLabel::Class(name) => {
                    names.insert(name.clone());
                    kept.push((utt.clone(), name));
                }
                ResolvedLabel::Dropped => {}
            }
        }
        if !kept.is_empty() {
            resolved.push((record.id, kept));
        }
    }
    let labels: Vec<String> = names.into_iter().collect();
    let conversations = resolved
        .into_iter()
        .enumerate()
        .map(|(fallback_id, (id, utts))| Conversation {
            id: id.unwrap_or(fallback_id as u64),
            utterances: utts
                .into_iter()
                .map(|(utt, label)| Utterance {
                    text: utt.text,
                    tokens: Vec::new(),
                    speaker: utt.speaker,
                    label: Some(
                        labels.iter().position(|l| *l == label).expect("known label") as u32,
                    ),
                })
                .collect(),
        })
        .collect();
    Ok(ErcDataset {
        conversations,
        labels,
    })
}

pub fn load_dataset(path: &Path) -> Result<ErcDataset> {
    dataset_from_records(&read_erc_records(path)?)
}
