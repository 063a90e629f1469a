//! The ledger state machine behind HTTP, and a typed client for it.

use std::fs::OpenOptions;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use fishnet_core::agent::CrawlerAgentConfig;
use fishnet_core::client::{build_withdrawal_request, JourneyReport, LocalConsentRecord, WithdrawalReceipt};
use fishnet_core::ledger::{
    AgentRegistry, Challenge, CompletionAction, EventBatch, EventFilter, EventKind, Ledger, LedgerCall, LedgerReply,
    TagBatchEntry, TagLedgerEntry, TxReceipt, WithdrawalOutcome, WithdrawalRequest,
};
use fishnet_core::{Digest, KeyPair};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Default)]
pub struct LedgerOptions {
    pub seed: u64,
    /// Every mutating call is appended here, one JSON line each.
    pub journal: Option<PathBuf>,
    /// Artificial confirmation delay, for demos only.
    pub latency: Duration,
}

struct Shared {
    ledger: Mutex<Ledger>,
    journal: Option<PathBuf>,
    latency: Duration,
}

impl Shared {
    /// The single ordered write path: journal, then apply. A call that
    /// cannot be journaled is not applied.
    fn apply(&self, call: LedgerCall) -> Result<LedgerReply> {
        let mut ledger = self.ledger.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(path) = &self.journal {
            journal_append(path, &call)?;
        }
        Ok(ledger.apply(call))
    }

    fn read<T>(&self, f: impl FnOnce(&Ledger) -> T) -> T {
        f(&self.ledger.lock().unwrap_or_else(|p| p.into_inner()))
    }
}

fn journal_append(path: &Path, call: &LedgerCall) -> Result<()> {
    let mut line = serde_json::to_vec(call)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).at(path)?;
    f.write_all(&line).at(path)
}

/// Loads a journal written by a ledger service.
pub fn read_journal(path: &Path) -> Result<Vec<LedgerCall>> {
    let text = std::fs::read_to_string(path).at(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Replays recorded calls against a fresh ledger.
pub fn replay(seed: u64, calls: impl IntoIterator<Item = LedgerCall>) -> Ledger {
    let mut ledger = Ledger::new(seed);
    for call in calls {
        ledger.apply(call);
    }
    ledger
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorBody {
    error: String,
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error: message })).into_response()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VersionBody {
    pub version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeqBody {
    pub seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchBody {
    pub entries: Vec<TagBatchEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventBody {
    pub tag: Digest,
    pub kind: EventKind,
    pub actor: String,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompleteBody {
    pub tag: Digest,
    pub custodian: String,
    pub action: CompletionAction,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub since: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<Digest>,
}

async fn delayed<T>(shared: &Shared, value: T) -> T {
    if !shared.latency.is_zero() {
        tokio::time::sleep(shared.latency).await;
    }
    value
}

async fn register_agent(State(s): State<Arc<Shared>>, Json(config): Json<CrawlerAgentConfig>) -> Response {
    let reply = s.apply(LedgerCall::RegisterAgent { config });
    delayed(&s, reply_response(reply)).await
}

async fn list_agents(State(s): State<Arc<Shared>>) -> Json<AgentRegistry> {
    Json(s.read(|l| l.agent_registry()))
}

async fn submit_batch(State(s): State<Arc<Shared>>, Json(body): Json<BatchBody>) -> Response {
    let reply = s.apply(LedgerCall::SubmitTagBatch { entries: body.entries });
    delayed(&s, reply_response(reply)).await
}

async fn append_event(State(s): State<Arc<Shared>>, Json(e): Json<EventBody>) -> Response {
    let reply = s.apply(LedgerCall::AppendEvent {
        tag: e.tag,
        kind: e.kind,
        actor: e.actor,
        detail: e.detail,
    });
    delayed(&s, reply_response(reply)).await
}

async fn issue_challenge(State(s): State<Arc<Shared>>) -> Response {
    let reply = s.apply(LedgerCall::IssueChallenge);
    delayed(&s, reply_response(reply)).await
}

async fn withdraw(State(s): State<Arc<Shared>>, Json(request): Json<WithdrawalRequest>) -> Response {
    let reply = s.apply(LedgerCall::SubmitWithdrawal { request });
    delayed(&s, reply_response(reply)).await
}

async fn complete(State(s): State<Arc<Shared>>, Json(c): Json<CompleteBody>) -> Response {
    let reply = s.apply(LedgerCall::ReportCompletion {
        tag: c.tag,
        custodian: c.custodian,
        action: c.action,
    });
    delayed(&s, reply_response(reply)).await
}

async fn query_tag(State(s): State<Arc<Shared>>, UrlPath(hash): UrlPath<String>) -> Response {
    let Ok(hash) = Digest::from_hex(&hash) else {
        return bad_request(format!("not a lowercase 32-byte hex digest: {hash}"));
    };
    match s.read(|l| l.query_tag(&hash)) {
        Some(entry) => Json(entry).into_response(),
        None => (
            StatusCode::NOT_FOUND,
            Json(ErrorBody {
                error: "not-found".into(),
            }),
        )
            .into_response(),
    }
}

async fn poll(State(s): State<Arc<Shared>>, Query(q): Query<EventsQuery>) -> Json<EventBatch> {
    let filter = EventFilter {
        party: q.party,
        tag: q.tag,
    };
    Json(s.read(|l| l.poll_events(q.since, &filter)))
}

fn reply_response(reply: Result<LedgerReply>) -> Response {
    let reply = match reply {
        Ok(r) => r,
        Err(e) => {
            tracing::error!("journal write failed: {e}");
            let body = ErrorBody {
                error: format!("journal unavailable: {e}"),
            };
            return (StatusCode::SERVICE_UNAVAILABLE, Json(body)).into_response();
        }
    };
    match reply {
        LedgerReply::Version { version } => Json(VersionBody { version }).into_response(),
        LedgerReply::Receipt { receipt } => Json(receipt).into_response(),
        LedgerReply::Seq { seq } => Json(SeqBody { seq }).into_response(),
        LedgerReply::Challenge { challenge } => Json(challenge).into_response(),
        LedgerReply::Withdrawal { outcome } => Json(outcome).into_response(),
        LedgerReply::Error { message } => bad_request(message),
    }
}

/// A running ledger service plus direct access to its state.
#[derive(Clone)]
pub struct LedgerService {
    shared: Arc<Shared>,
}

impl LedgerService {
    /// Starts from the calls already in the journal, if any.
    pub fn new(options: LedgerOptions) -> Result<Self> {
        let ledger = match &options.journal {
            Some(path) if path.exists() => replay(options.seed, read_journal(path)?),
            _ => Ledger::new(options.seed),
        };
        Ok(LedgerService {
            shared: Arc::new(Shared {
                ledger: Mutex::new(ledger),
                journal: options.journal,
                latency: options.latency,
            }),
        })
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/agents", post(register_agent).get(list_agents))
            .route("/tags/batch", post(submit_batch))
            .route("/tags/{hash}", get(query_tag))
            .route("/events", post(append_event).get(poll))
            .route("/challenge", post(issue_challenge))
            .route("/withdraw", post(withdraw))
            .route("/complete", post(complete))
            // A full-capacity batch is about 15 MB of JSON.
            .layer(DefaultBodyLimit::max(64 << 20))
            .with_state(self.shared.clone())
    }

    /// A snapshot of the state machine.
    pub fn snapshot(&self) -> Ledger {
        self.shared.read(Ledger::clone)
    }

    /// Binds `addr` and serves in the background. Returns the bound address.
    pub async fn spawn(&self, addr: SocketAddr) -> Result<SocketAddr> {
        let listener = TcpListener::bind(addr).await.at(addr.to_string())?;
        let bound = listener.local_addr().at(addr.to_string())?;
        let app = self.router();
        tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!("ledger service stopped: {e}");
            }
        });
        Ok(bound)
    }
}

/// Typed HTTP client for a ledger service.
#[derive(Debug, Clone)]
pub struct LedgerClient {
    base: String,
    http: reqwest::Client,
}

async fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp.json().await?);
    }
    let text = resp.text().await.unwrap_or_default();
    let message = serde_json::from_str::<ErrorBody>(&text)
        .map(|b| b.error)
        .unwrap_or(text);
    Err(Error::Ledger {
        status: status.as_u16(),
        message,
    })
}

pub(crate) fn direct_client() -> reqwest::Client {
    reqwest::Client::builder()
        .no_proxy()
        .timeout(Duration::from_secs(30))
        .build()
        .expect("static client configuration")
}

impl LedgerClient {
    pub fn new(base: &str) -> Self {
        LedgerClient {
            base: base.trim_end_matches('/').to_string(),
            http: direct_client(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn post<B: Serialize, T: serde::de::DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        decode(self.http.post(self.url(path)).json(body).send().await?).await
    }

    pub async fn register_agent(&self, config: &CrawlerAgentConfig) -> Result<u64> {
        Ok(self.post::<_, VersionBody>("/agents", config).await?.version)
    }

    pub async fn agents(&self) -> Result<AgentRegistry> {
        decode(self.http.get(self.url("/agents")).send().await?).await
    }

    pub async fn submit_tag_batch(&self, entries: Vec<TagBatchEntry>) -> Result<TxReceipt> {
        self.post("/tags/batch", &BatchBody { entries }).await
    }

    pub async fn append_event(&self, tag: Digest, kind: EventKind, actor: &str, detail: &str) -> Result<u64> {
        let body = EventBody {
            tag,
            kind,
            actor: actor.to_string(),
            detail: detail.to_string(),
        };
        Ok(self.post::<_, SeqBody>("/events", &body).await?.seq)
    }

    pub async fn issue_challenge(&self) -> Result<Challenge> {
        decode(self.http.post(self.url("/challenge")).send().await?).await
    }

    pub async fn submit_withdrawal(&self, request: &WithdrawalRequest) -> Result<WithdrawalOutcome> {
        self.post("/withdraw", request).await
    }

    pub async fn report_completion(&self, tag: Digest, custodian: &str, action: CompletionAction) -> Result<u64> {
        let body = CompleteBody {
            tag,
            custodian: custodian.to_string(),
            action,
        };
        Ok(self.post::<_, SeqBody>("/complete", &body).await?.seq)
    }

    pub async fn query_tag(&self, hash: &Digest) -> Result<Option<TagLedgerEntry>> {
        let resp = self.http.get(self.url(&format!("/tags/{hash}"))).send().await?;
        if resp.status() == StatusCode::NOT_FOUND.as_u16() {
            return Ok(None);
        }
        decode(resp).await.map(Some)
    }

    pub async fn poll_events(&self, query: &EventsQuery) -> Result<EventBatch> {
        decode(self.http.get(self.url("/events")).query(query).send().await?).await
    }

    /// The journey of a tag held in the caller's local records.
    pub async fn track_journey(&self, record: &LocalConsentRecord) -> Result<JourneyReport> {
        let entry = self.query_tag(&record.hash).await?;
        Ok(JourneyReport::from_entry(record.hash, entry))
    }

    /// Runs the challenge-response withdrawal for a locally recorded tag.
    pub async fn request_withdrawal(&self, record: &LocalConsentRecord, key: &KeyPair) -> Result<WithdrawalReceipt> {
        let challenge = self.issue_challenge().await?;
        let request = build_withdrawal_request(record, key, &challenge);
        match self.submit_withdrawal(&request).await? {
            WithdrawalOutcome::Accepted { seq, duplicate } => Ok(WithdrawalReceipt {
                tag_hash: record.hash,
                seq,
                duplicate,
            }),
            WithdrawalOutcome::Rejected { reason } => Err(Error::Rejected(reason)),
        }
    }
}
