//! The machine-learning side's consent records and training set.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, SignatureBytes};
use crate::dataset::DatasetRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingItem {
    pub record_id: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_hash: Option<Digest>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub items: Vec<TrainingItem>,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub hash: Digest,
    pub signature: SignatureBytes,
    pub record_ids: Vec<String>,
    pub ingest_time: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRecordsStore {
    pub records: BTreeMap<Digest, ConsentRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuarantineReason {
    /// Content no longer hashes to its tag.
    HashMismatch,
    /// Only one of the two tag fields is present.
    UnpairedTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantined {
    pub index: usize,
    pub url: String,
    pub reason: QuarantineReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub read: usize,
    pub ingested: usize,
    pub duplicates: usize,
    pub masked_skipped: usize,
    pub withdrawn_skipped: usize,
    pub quarantined: Vec<Quarantined>,
    /// Tags newly held by this party, in ingest order.
    pub new_tags: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum WithdrawOutcome {
    NotHeld,
    Removed { items: usize, training_version: u64 },
}

type DedupKey = (Option<Digest>, String);

fn dedup_key(tag: Option<Digest>, content: &str) -> DedupKey {
    (tag, String::from(content))
}

/// Keeps the first record per (tag hash, content); order and tags preserved.
pub fn deduplicate(items: Vec<DatasetRecord>) -> Vec<DatasetRecord> {
    let mut seen = BTreeSet::new();
    items
        .into_iter()
        .filter(|r| seen.insert(dedup_key(r.consent_tag_hash, &r.content)))
        .collect()
}

/// Stores owned by one ML party.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlStores {
    pub training: TrainingSet,
    pub consents: ConsentRecordsStore,
    /// Hashes withdrawn while held here; never re-ingested.
    pub withdrawn: BTreeSet<Digest>,
    next_record: u64,
}

impl MlStores {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reassembles stores saved piecewise.
    pub fn from_parts(
        training: TrainingSet,
        consents: ConsentRecordsStore,
        withdrawn: BTreeSet<Digest>,
        records_issued: u64,
    ) -> Self {
        MlStores {
            training,
            consents,
            withdrawn,
            next_record: records_issued,
        }
    }

    /// Number of record ids handed out so far.
    pub fn records_issued(&self) -> u64 {
        self.next_record
    }

    pub fn holds(&self, hash: &Digest) -> bool {
        self.consents.records.contains_key(hash) || self.training.items.iter().any(|i| i.tag_hash == Some(*hash))
    }

    /// Verifies, deduplicates and adds records. Masked records carry only
    /// placeholder text and are skipped; tagged records whose content fails
    /// the hash check are quarantined.
    pub fn ingest(&mut self, records: Vec<DatasetRecord>, now: u64) -> IngestSummary {
        let mut summary = IngestSummary {
            read: records.len(),
            ..IngestSummary::default()
        };
        let mut seen: BTreeSet<DedupKey> = self
            .training
            .items
            .iter()
            .map(|i| dedup_key(i.tag_hash, &i.content))
            .collect();
        let mut changed = false;
        for (index, r) in records.into_iter().enumerate() {
            if r.masked {
                summary.masked_skipped += 1;
                continue;
            }
            if !r.tag_fields_paired() {
                summary.quarantined.push(Quarantined {
                    index,
                    url: r.url.clone(),
                    reason: QuarantineReason::UnpairedTag,
                });
                continue;
            }
            if !r.content_matches_tag() {
                summary.quarantined.push(Quarantined {
                    index,
                    url: r.url.clone(),
                    reason: QuarantineReason::HashMismatch,
                });
                continue;
            }
            if r.consent_tag_hash.is_some_and(|h| self.withdrawn.contains(&h)) {
                summary.withdrawn_skipped += 1;
                continue;
            }
            if !seen.insert(dedup_key(r.consent_tag_hash, &r.content)) {
                summary.duplicates += 1;
                continue;
            }
            self.next_record += 1;
            let record_id = format!("r{}", self.next_record);
            if let (Some(hash), Some(sig)) = (r.consent_tag_hash, r.consent_tag_sig) {
                let entry = self.consents.records.entry(hash).or_insert_with(|| {
                    summary.new_tags.push(hash);
                    ConsentRecord {
                        hash,
                        signature: sig,
                        record_ids: Vec::new(),
                        ingest_time: now,
                    }
                });
                entry.record_ids.push(record_id.clone());
            }
            self.training.items.push(TrainingItem {
                record_id,
                content: r.content,
                tag_hash: r.consent_tag_hash,
            });
            summary.ingested += 1;
            changed = true;
        }
        if changed {
            self.training.version += 1;
        }
        summary
    }

    /// Drops every training item and the consent record for `hash`.
    pub fn withdraw(&mut self, hash: &Digest) -> WithdrawOutcome {
        if !self.holds(hash) {
            return WithdrawOutcome::NotHeld;
        }
        let before = self.training.items.len();
        self.training.items.retain(|i| i.tag_hash != Some(*hash));
        self.consents.records.remove(hash);
        self.withdrawn.insert(*hash);
        self.training.version += 1;
        WithdrawOutcome::Removed {
            items: before - self.training.items.len(),
            training_version: self.training.version,
        }
    }
}
