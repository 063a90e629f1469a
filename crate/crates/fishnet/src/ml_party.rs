//! A downstream custodian: the ML side's persisted stores plus any dataset
//! files the party holds, kept in step with ledger withdrawals.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fishnet_core::dataset::DatasetRecord;
use fishnet_core::ledger::{CompletionAction, EventKind, LedgerEvent};
use fishnet_core::ml::{
    ConsentRecord, ConsentRecordsStore, IngestSummary, MlStores, TrainingItem, TrainingSet, WithdrawOutcome,
};
use fishnet_core::Digest;

use crate::dataset_io::{read_dataset, scrub_dataset};
use crate::error::{IoContext, Result};
use crate::jsonl;
use crate::ledger_http::{EventsQuery, LedgerClient};
use crate::unix_now;

const TRAINING_FILE: &str = "training.jsonl";
const CONSENTS_FILE: &str = "consents.jsonl";
const STATE_FILE: &str = "state.json";
const RETRAINING_LOG: &str = "retraining.log";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PendingReport {
    tag: Digest,
    action: CompletionAction,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct PartyState {
    training_version: u64,
    records_issued: u64,
    withdrawn: BTreeSet<Digest>,
    high_water: u64,
    /// Completions not yet accepted by the ledger.
    pending: Vec<PendingReport>,
}

/// What a withdrawal did here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawalHandled {
    pub tag: Digest,
    pub training_items_removed: usize,
    pub dataset_records_removed: usize,
    pub reported: Vec<CompletionAction>,
}

pub struct MlParty {
    party: String,
    dir: PathBuf,
    datasets: Vec<PathBuf>,
    stores: MlStores,
    state: PartyState,
}

impl MlParty {
    /// Opens (or creates) the party's store directory.
    pub fn open(party: &str, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).at(&dir)?;
        let state: PartyState = jsonl::read_json(&dir.join(STATE_FILE))?.unwrap_or_default();
        let items = jsonl::read_lenient::<TrainingItem>(&dir.join(TRAINING_FILE))?;
        let consents = jsonl::read_lenient::<ConsentRecord>(&dir.join(CONSENTS_FILE))?;
        if items.skipped + consents.skipped > 0 {
            tracing::warn!(
                "{}: {} unreadable store lines",
                dir.display(),
                items.skipped + consents.skipped
            );
        }
        let stores = MlStores::from_parts(
            TrainingSet {
                items: items.records,
                version: state.training_version,
            },
            ConsentRecordsStore {
                records: consents.records.into_iter().map(|c| (c.hash, c)).collect(),
            },
            state.withdrawn.clone(),
            state.records_issued,
        );
        Ok(MlParty {
            party: party.to_string(),
            dir,
            datasets: Vec::new(),
            stores,
            state,
        })
    }

    /// Dataset files this party holds and must scrub on withdrawal.
    pub fn with_datasets(mut self, datasets: Vec<PathBuf>) -> Self {
        self.datasets = datasets;
        self
    }

    pub fn party(&self) -> &str {
        &self.party
    }

    pub fn stores(&self) -> &MlStores {
        &self.stores
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn save(&mut self) -> Result<()> {
        self.state.training_version = self.stores.training.version;
        self.state.records_issued = self.stores.records_issued();
        self.state.withdrawn = self.stores.withdrawn.clone();
        jsonl::write_all(&self.dir.join(TRAINING_FILE), self.stores.training.items.iter())?;
        jsonl::write_all(&self.dir.join(CONSENTS_FILE), self.stores.consents.records.values())?;
        jsonl::write_json(&self.dir.join(STATE_FILE), &self.state)
    }

    /// Verifies, deduplicates and stores a dataset, then logs one training
    /// event per newly held tag.
    pub async fn ingest_dataset(&mut self, path: &Path, ledger: Option<&LedgerClient>) -> Result<IngestSummary> {
        let records = read_dataset(path)?;
        self.ingest_records(records, ledger).await
    }

    pub async fn ingest_records(
        &mut self,
        records: Vec<DatasetRecord>,
        ledger: Option<&LedgerClient>,
    ) -> Result<IngestSummary> {
        let summary = self.stores.ingest(records, unix_now());
        self.save()?;
        if let Some(ledger) = ledger {
            for tag in &summary.new_tags {
                ledger.append_event(*tag, EventKind::Training, &self.party, "").await?;
            }
        }
        Ok(summary)
    }

    fn log_retraining(&self, tag: &Digest) -> Result<()> {
        let path = self.dir.join(RETRAINING_LOG);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).at(&path)?;
        writeln!(
            f,
            "{} retraining-started tag={tag} training_version={}",
            unix_now(),
            self.stores.training.version
        )
        .at(&path)
    }

    /// Removes a withdrawn tag from everything this party holds. Reports
    /// retraining (when training data changed) and deletion to the ledger.
    /// A tag held nowhere here is a no-op.
    pub async fn handle_withdrawal_event(
        &mut self,
        event: &LedgerEvent,
        ledger: &LedgerClient,
    ) -> Result<Option<WithdrawalHandled>> {
        if event.kind != EventKind::WithdrawalRequested {
            return Ok(None);
        }
        let tag = event.tag;
        let training_items_removed = match self.stores.withdraw(&tag) {
            WithdrawOutcome::Removed { items, .. } => {
                self.log_retraining(&tag)?;
                Some(items)
            }
            WithdrawOutcome::NotHeld => None,
        };
        let mut dataset_records_removed = None;
        for path in &self.datasets {
            if path.exists() {
                let n = scrub_dataset(path, &tag)?;
                dataset_records_removed = Some(dataset_records_removed.unwrap_or(0) + n);
            }
        }
        let held_dataset = dataset_records_removed.is_some_and(|n| n > 0);
        if training_items_removed.is_none() && !held_dataset {
            return Ok(None);
        }
        if training_items_removed.is_some() {
            self.state.pending.push(PendingReport {
                tag,
                action: CompletionAction::Retraining,
            });
        }
        self.state.pending.push(PendingReport {
            tag,
            action: CompletionAction::Deletion,
        });
        self.save()?;
        let reported: Vec<CompletionAction> = self
            .state
            .pending
            .iter()
            .filter(|p| p.tag == tag)
            .map(|p| p.action)
            .collect();
        self.flush_reports(ledger).await?;
        Ok(Some(WithdrawalHandled {
            tag,
            training_items_removed: training_items_removed.unwrap_or(0),
            dataset_records_removed: dataset_records_removed.unwrap_or(0),
            reported,
        }))
    }

    /// Sends completions the ledger has not yet acknowledged.
    async fn flush_reports(&mut self, ledger: &LedgerClient) -> Result<()> {
        while let Some(p) = self.state.pending.first().cloned() {
            ledger.report_completion(p.tag, &self.party, p.action).await?;
            self.state.pending.remove(0);
            self.save()?;
        }
        Ok(())
    }

    /// One poll of the ledger: handles new withdrawal events for tags this
    /// party is custodian of, then advances the persisted high-water mark.
    pub async fn poll_once(&mut self, ledger: &LedgerClient) -> Result<Vec<WithdrawalHandled>> {
        self.flush_reports(ledger).await?;
        let batch = ledger
            .poll_events(&EventsQuery {
                since: self.state.high_water,
                party: Some(self.party.clone()),
                tag: None,
            })
            .await?;
        let mut handled = Vec::new();
        for event in &batch.events {
            if let Some(h) = self.handle_withdrawal_event(event, ledger).await? {
                handled.push(h);
            }
        }
        self.state.high_water = batch.high_water;
        self.save()?;
        Ok(handled)
    }

    /// True if any store or dataset here still references `tag`.
    pub fn references(&self, tag: &Digest) -> Result<bool> {
        if self.stores.holds(tag) {
            return Ok(true);
        }
        for path in &self.datasets {
            if path.exists()
                && read_dataset(path)?
                    .iter()
                    .any(|r| r.consent_tag_hash.as_ref() == Some(tag))
            {
                return Ok(true);
            }
        }
        Ok(false)
    }
}
