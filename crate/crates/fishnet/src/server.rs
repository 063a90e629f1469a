//! The web site: stores submissions with their consent entries, identifies
//! crawlers, serves filtered and tag-annotated content, and keeps the ledger
//! informed.

use std::collections::VecDeque;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{ConnectInfo, Request, State};
use axum::http::{header, HeaderMap, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use fishnet_core::agent::{admit_visitor, Admission, CrawlerAgentConfig, VisitorMeta};
use fishnet_core::consent::wire;
use fishnet_core::error::SubmissionError;
use fishnet_core::html::render_tagged_html;
use fishnet_core::ledger::{CompletionAction, EventKind, TagBatchEntry};
use fishnet_core::request::HttpRequest;
use fishnet_core::robots::{parse_robots, RobotsPolicy};
use fishnet_core::site::{ApiItem, ServeView, ServedItem, SiteStore};
use fishnet_core::{Digest, TaggedContent};

use crate::error::{Error, IoContext, Result};
use crate::jsonl;
use crate::ledger_http::{EventsQuery, LedgerClient};
use crate::queue::{LedgerOp, LedgerQueue};
use crate::unix_now;

pub const AUTHOR_HEADER: &str = "X-Author";
pub const DEFAULT_PARTY: &str = "web-server";
/// Access records kept in memory.
pub const ACCESS_LOG_MEMORY: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub port: u16,
    /// Custodian id used on the ledger.
    pub party: String,
    pub ledger: Option<String>,
    /// robots.txt body served verbatim after parsing.
    pub robots: String,
    /// Site store, access log and queue live here when set.
    pub data_dir: Option<PathBuf>,
    /// Response cache keyed on store version, for benchmarking.
    pub cache: bool,
    /// Off gives a site without the consent processor: everyone sees
    /// everything, no identification, no ledger traffic.
    pub consent: bool,
    /// Zero disables the background watcher; callers then drive
    /// `refresh_registry` and `process_withdrawals` themselves.
    pub poll_interval_ms: u64,
    /// Crawler identities known before the first registry refresh.
    pub crawlers: Vec<CrawlerAgentConfig>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            port: 8080,
            party: DEFAULT_PARTY.into(),
            ledger: None,
            robots: String::new(),
            data_dir: None,
            cache: false,
            consent: true,
            poll_interval_ms: 500,
            crawlers: Vec::new(),
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    /// Milliseconds since the server started.
    pub at_ms: u64,
    pub method: String,
    pub path: String,
    pub user_agent: String,
    pub source_ip: IpAddr,
    pub status: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Html,
    Json,
}

#[derive(Debug, Clone)]
struct CachedPage {
    version: u64,
    body: Bytes,
    served_tags: Arc<[Digest]>,
}

/// Rendered views per format, keyed without allocating on lookup.
#[derive(Debug, Default)]
struct PageCache {
    regular: [Option<CachedPage>; 2],
    // A handful of crawlers at most; a scan beats hashing the name.
    crawlers: Vec<(String, [Option<CachedPage>; 2])>,
}

impl PageCache {
    fn slot(&mut self, crawler: Option<&str>) -> &mut [Option<CachedPage>; 2] {
        match crawler {
            None => &mut self.regular,
            Some(name) => {
                let i = match self.crawlers.iter().position(|(n, _)| n == name) {
                    Some(i) => i,
                    None => {
                        self.crawlers.push((name.to_string(), Default::default()));
                        self.crawlers.len() - 1
                    }
                };
                &mut self.crawlers[i].1
            }
        }
    }

    fn get(&self, crawler: Option<&str>, format: Format, version: u64) -> Option<&CachedPage> {
        let slot = match crawler {
            None => Some(&self.regular),
            Some(name) => self.crawlers.iter().find(|(n, _)| n == name).map(|(_, s)| s),
        };
        slot?[format as usize].as_ref().filter(|c| c.version == version)
    }

    fn clear(&mut self) {
        *self = PageCache::default();
    }
}

/// A rendered content response.
#[derive(Debug, Clone)]
pub struct Page {
    pub status: StatusCode,
    pub format: Format,
    pub body: Bytes,
    pub served_tags: Arc<[Digest]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub data_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consent_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tag_hash: Option<Digest>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WatchState {
    high_water: u64,
}

pub struct WebServer {
    config: ServerConfig,
    robots: RobotsPolicy,
    robots_body: Bytes,
    store: RwLock<SiteStore>,
    registry: RwLock<(u64, Vec<CrawlerAgentConfig>)>,
    cache: Mutex<PageCache>,
    access: Mutex<VecDeque<AccessRecord>>,
    started: Instant,
    queue: Option<LedgerQueue>,
    ledger: Option<LedgerClient>,
    watch: Mutex<WatchState>,
}

fn store_path(dir: &Path) -> PathBuf {
    dir.join("site.json")
}

impl WebServer {
    /// Builds the server, loading saved state from the data directory.
    /// Must run inside a tokio runtime when a ledger is configured.
    pub fn new(config: ServerConfig) -> Result<Arc<Self>> {
        let robots = parse_robots(&config.robots);
        let robots_body = Bytes::from(robots.render());
        let mut store = SiteStore::new();
        let mut watch = WatchState::default();
        if let Some(dir) = &config.data_dir {
            std::fs::create_dir_all(dir).at(dir)?;
            if let Some(saved) = jsonl::read_json(&store_path(dir))? {
                store = saved;
            }
            if let Some(saved) = jsonl::read_json(&dir.join("watch.json"))? {
                watch = saved;
            }
        }
        let ledger = match (&config.ledger, config.consent) {
            (Some(url), true) => Some(LedgerClient::new(url)),
            _ => None,
        };
        let queue = match &ledger {
            Some(client) => Some(LedgerQueue::start(
                client.clone(),
                config.data_dir.as_ref().map(|d| d.join("ledger-queue.jsonl")),
            )?),
            None => None,
        };
        Ok(Arc::new(WebServer {
            registry: RwLock::new((0, config.crawlers.clone())),
            robots,
            robots_body,
            store: RwLock::new(store),
            cache: Mutex::new(PageCache::default()),
            access: Mutex::new(VecDeque::new()),
            started: Instant::now(),
            queue,
            ledger,
            watch: Mutex::new(watch),
            config,
        }))
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn robots(&self) -> &RobotsPolicy {
        &self.robots
    }

    pub fn store(&self) -> SiteStore {
        self.store.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// The most recent requests, oldest first. The file under the data
    /// directory keeps all of them.
    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.access
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .iter()
            .cloned()
            .collect()
    }

    pub fn registry(&self) -> Vec<CrawlerAgentConfig> {
        self.registry.read().unwrap_or_else(|p| p.into_inner()).1.clone()
    }

    pub fn set_registry(&self, agents: Vec<CrawlerAgentConfig>) {
        *self.registry.write().unwrap_or_else(|p| p.into_inner()) = (0, agents);
        self.cache.lock().unwrap_or_else(|p| p.into_inner()).clear();
    }

    fn save_store(&self, store: &SiteStore) {
        if let Some(dir) = &self.config.data_dir {
            if let Err(e) = jsonl::write_json(&store_path(dir), store) {
                tracing::error!("could not save site store: {e}");
            }
        }
    }

    fn log_access(&self, record: AccessRecord) {
        if let Some(dir) = &self.config.data_dir {
            if let Err(e) = jsonl::append(&dir.join("access.jsonl"), &record) {
                tracing::warn!("access log: {e}");
            }
        }
        let mut log = self.access.lock().unwrap_or_else(|p| p.into_inner());
        if log.len() == ACCESS_LOG_MEMORY {
            log.pop_front();
        }
        log.push_back(record);
    }

    /// Stores a submission; queues the tag upload when it carries one.
    pub fn submit(&self, req: &HttpRequest) -> Result<SubmitResponse, SubmissionError> {
        let author = req.headers.get(AUTHOR_HEADER).unwrap_or("anonymous").to_string();
        let mut store = self.store.write().unwrap_or_else(|p| p.into_inner());
        let sub = store.handle_data_submission(req, &author, unix_now())?;
        self.save_store(&store);
        drop(store);
        if let (Some(queue), Some(tag)) = (&self.queue, &sub.tag) {
            queue.push(LedgerOp::Tag(TagBatchEntry {
                hash: tag.hash,
                sig: tag.signature.clone(),
                custodian: self.config.party.clone(),
            }));
        }
        Ok(SubmitResponse {
            data_id: sub.data_id,
            consent_id: sub.consent_id,
            tag_hash: sub.tag.map(|t| t.hash),
        })
    }

    /// Content response for a visitor, as `/posts` and `/api/posts` serve it.
    pub fn respond(&self, meta: &VisitorMeta, format: Format, path: &str) -> Page {
        let registry = self.registry.read().unwrap_or_else(|p| p.into_inner());
        let admission = if self.config.consent {
            // The clock only matters for a presented timestamp.
            let now = if meta.timestamp.is_some() { unix_now() } else { 0 };
            admit_visitor(meta, &registry.1, now)
        } else {
            Admission::Regular
        };
        let crawler = match admission {
            Admission::Rejected => {
                return Page {
                    status: StatusCode::FORBIDDEN,
                    format,
                    body: Bytes::new(),
                    served_tags: Arc::from([]),
                }
            }
            Admission::Regular => None,
            Admission::Crawler(agent) => Some(agent.name.as_str()),
        };
        let (body, served_tags) = self.render_cached(crawler, format);
        if let (Some(queue), Some(name)) = (&self.queue, crawler) {
            queue.push_all(served_tags.iter().map(|tag| LedgerOp::Event {
                tag: *tag,
                kind: EventKind::Crawl,
                actor: name.to_string(),
                detail: path.to_string(),
            }));
        }
        Page {
            status: StatusCode::OK,
            format,
            body,
            served_tags,
        }
    }

    fn render_cached(&self, crawler: Option<&str>, format: Format) -> (Bytes, Arc<[Digest]>) {
        let store = self.store.read().unwrap_or_else(|p| p.into_inner());
        if self.config.cache {
            let cache = self.cache.lock().unwrap_or_else(|p| p.into_inner());
            if let Some(hit) = cache.get(crawler, format, store.version()) {
                return (hit.body.clone(), hit.served_tags.clone());
            }
        }
        let (items, served_tags): (Vec<ServedItem>, Vec<Digest>) = match crawler {
            Some(name) => {
                let r = store.serve(ServeView::Crawler(name));
                (r.items, r.served_tags)
            }
            None => (store.serve(ServeView::Regular).items, Vec::new()),
        };
        let body = match format {
            Format::Html => {
                let items: Vec<TaggedContent> = items.into_iter().map(|s| s.item).collect();
                Bytes::from(render_tagged_html(&items))
            }
            Format::Json => {
                let api: Vec<ApiItem> = items.iter().map(ApiItem::from).collect();
                Bytes::from(serde_json::to_vec(&api).expect("api items serialize"))
            }
        };
        let served_tags: Arc<[Digest]> = served_tags.into();
        if self.config.cache {
            self.cache.lock().unwrap_or_else(|p| p.into_inner()).slot(crawler)[format as usize] = Some(CachedPage {
                version: store.version(),
                body: body.clone(),
                served_tags: served_tags.clone(),
            });
        }
        (body, served_tags)
    }

    /// Waits for queued ledger writes to land.
    pub async fn flush(&self, timeout: Duration) -> Result<()> {
        match &self.queue {
            Some(q) => q.flush(timeout).await,
            None => Ok(()),
        }
    }

    /// Pulls the agent registry from the ledger if it changed.
    pub async fn refresh_registry(&self) -> Result<()> {
        let Some(ledger) = &self.ledger else {
            return Ok(());
        };
        let fetched = ledger.agents().await?;
        let mut reg = self.registry.write().unwrap_or_else(|p| p.into_inner());
        if fetched.version != reg.0 {
            let mut agents = self.config.crawlers.clone();
            for a in fetched.agents {
                agents.retain(|c| c.name != a.name);
                agents.push(a);
            }
            *reg = (fetched.version, agents);
            self.cache.lock().unwrap_or_else(|p| p.into_inner()).clear();
        }
        Ok(())
    }

    /// One pass over new ledger events: deletes withdrawn data and reports
    /// the deletion. Returns the hashes handled.
    pub async fn process_withdrawals(&self) -> Result<Vec<Digest>> {
        let Some(ledger) = &self.ledger else {
            return Ok(Vec::new());
        };
        let since = self.watch.lock().unwrap_or_else(|p| p.into_inner()).high_water;
        let batch = ledger
            .poll_events(&EventsQuery {
                since,
                party: Some(self.config.party.clone()),
                tag: None,
            })
            .await?;
        let mut handled = Vec::new();
        for event in batch.events.iter().filter(|e| e.kind == EventKind::WithdrawalRequested) {
            {
                let mut store = self.store.write().unwrap_or_else(|p| p.into_inner());
                let removed = store.remove_by_hash(&event.tag);
                if !removed.is_empty() {
                    self.save_store(&store);
                    tracing::info!("withdrawn {}: removed data {removed:?}", event.tag);
                }
            }
            // Our queued writes for this tag must land before we report.
            self.flush(Duration::from_secs(30)).await?;
            ledger
                .report_completion(event.tag, &self.config.party, CompletionAction::Deletion)
                .await?;
            handled.push(event.tag);
        }
        let mut watch = self.watch.lock().unwrap_or_else(|p| p.into_inner());
        watch.high_water = batch.high_water;
        if let Some(dir) = &self.config.data_dir {
            jsonl::write_json(&dir.join("watch.json"), &*watch)?;
        }
        Ok(handled)
    }

    /// Background loop for registry refresh and withdrawal handling.
    pub fn spawn_watcher(self: &Arc<Self>) {
        if self.ledger.is_none() || self.config.poll_interval_ms == 0 {
            return;
        }
        let server = self.clone();
        let every = Duration::from_millis(server.config.poll_interval_ms);
        tokio::spawn(async move {
            loop {
                if let Err(e) = server.refresh_registry().await {
                    tracing::warn!("registry refresh: {e}");
                }
                if let Err(e) = server.process_withdrawals().await {
                    tracing::warn!("withdrawal poll: {e}");
                }
                tokio::time::sleep(every).await;
            }
        });
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/submit", post(submit).put(submit).patch(submit))
            .route("/posts", get(posts_html))
            .route("/api/posts", get(posts_json))
            .route("/robots.txt", get(robots_txt))
            .fallback(not_found)
            .layer(middleware::from_fn_with_state(self.clone(), access_log))
            .with_state(self.clone())
    }

    /// Binds and serves in the background; returns the bound address.
    pub async fn spawn(self: &Arc<Self>, addr: SocketAddr) -> Result<SocketAddr> {
        let listener = TcpListener::bind(addr).await.at(addr.to_string())?;
        let bound = listener.local_addr().at(addr.to_string())?;
        let app = self.router().into_make_service_with_connect_info::<SocketAddr>();
        tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!("web server stopped: {e}");
            }
        });
        self.spawn_watcher();
        Ok(bound)
    }
}

fn source_ip(req: &Request) -> IpAddr {
    req.extensions()
        .get::<ConnectInfo<SocketAddr>>()
        .map(|c| c.0.ip())
        .unwrap_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED))
}

fn header_str(headers: &HeaderMap, name: &str) -> Option<String> {
    headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string)
}

fn visitor_meta(headers: &HeaderMap, ip: IpAddr) -> VisitorMeta {
    VisitorMeta {
        user_agent: header_str(headers, header::USER_AGENT.as_str()).unwrap_or_default(),
        source_ip: ip,
        timestamp: header_str(headers, wire::CRAWLER_TIMESTAMP),
        signature: header_str(headers, wire::CRAWLER_SIG),
    }
}

async fn access_log(State(server): State<Arc<WebServer>>, req: Request, next: Next) -> Response {
    let at_ms = server.started.elapsed().as_millis() as u64;
    let method = req.method().to_string();
    let path = req.uri().path().to_string();
    let user_agent = header_str(req.headers(), header::USER_AGENT.as_str()).unwrap_or_default();
    let ip = source_ip(&req);
    let resp = next.run(req).await;
    server.log_access(AccessRecord {
        at_ms,
        method,
        path,
        user_agent,
        source_ip: ip,
        status: resp.status().as_u16(),
    });
    resp
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

async fn submit(State(server): State<Arc<WebServer>>, method: Method, headers: HeaderMap, body: Bytes) -> Response {
    let mut req = HttpRequest::new(method.as_str(), "/submit").body(body.to_vec());
    for (name, value) in &headers {
        if let Ok(v) = value.to_str() {
            req.headers.insert(name.as_str(), v);
        }
    }
    match server.submit(&req) {
        Ok(r) => (StatusCode::CREATED, Json(r)).into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, Json(ErrorBody { error: e.to_string() })).into_response(),
    }
}

fn content_response(page: Page) -> Response {
    if page.status != StatusCode::OK {
        return page.status.into_response();
    }
    let content_type = match page.format {
        Format::Html => "text/html; charset=utf-8",
        Format::Json => "application/json",
    };
    ([(header::CONTENT_TYPE, content_type)], Body::from(page.body)).into_response()
}

async fn posts_html(State(server): State<Arc<WebServer>>, req: Request) -> Response {
    let meta = visitor_meta(req.headers(), source_ip(&req));
    content_response(server.respond(&meta, Format::Html, req.uri().path()))
}

async fn posts_json(State(server): State<Arc<WebServer>>, req: Request) -> Response {
    let meta = visitor_meta(req.headers(), source_ip(&req));
    content_response(server.respond(&meta, Format::Json, req.uri().path()))
}

async fn robots_txt(State(server): State<Arc<WebServer>>) -> Response {
    (
        [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
        Body::from(server.robots_body.clone()),
    )
        .into_response()
}

async fn not_found() -> StatusCode {
    StatusCode::NOT_FOUND
}
