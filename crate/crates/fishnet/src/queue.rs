//! FIFO of ledger writes that survives ledger outages and restarts.
//!
//! Producers push without waiting; one worker drains the queue in order,
//! coalescing runs of tag uploads into batches, and retries the head with
//! back-off until the ledger accepts it.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use fishnet_core::ledger::{EventKind, TagBatchEntry, TX_CAPACITY};
use fishnet_core::Digest;

use crate::error::{Error, Result};
use crate::jsonl;
use crate::ledger_http::LedgerClient;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum LedgerOp {
    Tag(TagBatchEntry),
    Event {
        tag: Digest,
        kind: EventKind,
        actor: String,
        detail: String,
    },
}

struct Inner {
    pending: Mutex<VecDeque<LedgerOp>>,
    file: Option<PathBuf>,
    wake: Notify,
    drained: Notify,
    client: LedgerClient,
}

#[derive(Clone)]
pub struct LedgerQueue {
    inner: Arc<Inner>,
}

const RETRY_MIN: Duration = Duration::from_millis(100);
const RETRY_MAX: Duration = Duration::from_secs(5);

impl LedgerQueue {
    /// Starts the worker. Pending work saved in `file` is resumed.
    pub fn start(client: LedgerClient, file: Option<PathBuf>) -> Result<Self> {
        let pending = match &file {
            Some(path) => {
                let read = jsonl::read_lenient::<LedgerOp>(path)?;
                if read.skipped > 0 {
                    tracing::warn!(
                        "{} unreadable queue entries dropped from {}",
                        read.skipped,
                        path.display()
                    );
                }
                read.records.into()
            }
            None => VecDeque::new(),
        };
        let queue = LedgerQueue {
            inner: Arc::new(Inner {
                pending: Mutex::new(pending),
                file,
                wake: Notify::new(),
                drained: Notify::new(),
                client,
            }),
        };
        tokio::spawn(worker(queue.inner.clone()));
        Ok(queue)
    }

    pub fn push(&self, op: LedgerOp) {
        self.push_all(std::iter::once(op));
    }

    pub fn push_all(&self, ops: impl IntoIterator<Item = LedgerOp>) {
        {
            let mut pending = self.inner.pending.lock().unwrap_or_else(|p| p.into_inner());
            let before = pending.len();
            pending.extend(ops);
            if pending.len() == before {
                return;
            }
            persist(&self.inner, &pending);
        }
        self.inner.wake.notify_one();
    }

    pub fn len(&self) -> usize {
        self.inner.pending.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Waits until everything pushed so far has been accepted by the ledger.
    pub async fn flush(&self, timeout: Duration) -> Result<()> {
        let wait = async {
            loop {
                let drained = self.inner.drained.notified();
                if self.is_empty() {
                    return;
                }
                drained.await;
            }
        };
        tokio::time::timeout(timeout, wait)
            .await
            .map_err(|_| Error::Timeout("ledger queue to drain".into()))
    }
}

fn persist(inner: &Inner, pending: &VecDeque<LedgerOp>) {
    if let Some(path) = &inner.file {
        if let Err(e) = jsonl::write_all(path, pending.iter()) {
            tracing::error!("could not save ledger queue: {e}");
        }
    }
}

/// The head of the queue as one ledger call: a run of tag uploads up to the
/// transaction capacity, or a single event.
fn next_unit(pending: &VecDeque<LedgerOp>) -> Option<(usize, LedgerOp, Vec<TagBatchEntry>)> {
    let head = pending.front()?.clone();
    let tags: Vec<TagBatchEntry> = pending
        .iter()
        .take(TX_CAPACITY)
        .map_while(|op| match op {
            LedgerOp::Tag(e) => Some(e.clone()),
            LedgerOp::Event { .. } => None,
        })
        .collect();
    let n = tags.len().max(1);
    Some((n, head, tags))
}

async fn send(client: &LedgerClient, head: &LedgerOp, tags: Vec<TagBatchEntry>) -> Result<()> {
    match head {
        LedgerOp::Tag(_) => client.submit_tag_batch(tags).await.map(drop),
        LedgerOp::Event {
            tag,
            kind,
            actor,
            detail,
        } => client.append_event(*tag, *kind, actor, detail).await.map(drop),
    }
}

async fn worker(inner: Arc<Inner>) {
    let mut retry = RETRY_MIN;
    loop {
        let wake = inner.wake.notified();
        let unit = next_unit(&inner.pending.lock().unwrap_or_else(|p| p.into_inner()));
        let Some((n, head, tags)) = unit else {
            inner.drained.notify_waiters();
            wake.await;
            continue;
        };
        match send(&inner.client, &head, tags).await {
            Ok(()) => {
                retry = RETRY_MIN;
                let mut pending = inner.pending.lock().unwrap_or_else(|p| p.into_inner());
                pending.drain(..n);
                persist(&inner, &pending);
            }
            // The ledger refused the call itself; retrying cannot help.
            Err(Error::Ledger { status, message }) if (400..500).contains(&status) => {
                tracing::error!("ledger refused queued {head:?}: {message}");
                let mut pending = inner.pending.lock().unwrap_or_else(|p| p.into_inner());
                pending.drain(..n);
                persist(&inner, &pending);
            }
            Err(e) => {
                tracing::warn!("ledger unavailable ({e}); retrying in {retry:?}");
                tokio::time::sleep(retry).await;
                retry = (retry * 2).min(RETRY_MAX);
            }
        }
    }
}
