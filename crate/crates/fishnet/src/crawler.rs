//! A polite crawler: robots.txt first, adaptive per-host pacing, signed
//! timestamps on every request, and tag-preserving extraction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::time::{Duration, Instant};

use reqwest::Url;
use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};

use fishnet_core::agent::sign_timestamp;
use fishnet_core::backoff::{BackoffPolicy, HostPacer};
use fishnet_core::consent::{wire, MASK_PLACEHOLDER};
use fishnet_core::crypto::SignatureBytes;
use fishnet_core::dataset::DatasetRecord;
use fishnet_core::html::POST_CLASS;
use fishnet_core::ledger::EventKind;
use fishnet_core::robots::{parse_robots, RobotsPolicy};
use fishnet_core::{Digest, KeyPair};

use crate::error::{Error, Result};
use crate::ledger_http::{direct_client, LedgerClient};
use crate::unix_now;

pub struct CrawlerIdentity {
    pub name: String,
    pub key: KeyPair,
    pub user_agent: String,
}

impl CrawlerIdentity {
    pub fn new(name: &str, key: KeyPair) -> Self {
        CrawlerIdentity {
            user_agent: format!("Mozilla/5.0 (compatible; {name}/1.0)"),
            name: name.to_string(),
            key,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrawlSettings {
    pub max_pages: usize,
    pub backoff: BackoffPolicy,
    pub timeout: Duration,
    pub follow_links: bool,
}

impl Default for CrawlSettings {
    fn default() -> Self {
        CrawlSettings {
            max_pages: 100,
            backoff: BackoffPolicy::default(),
            timeout: Duration::from_secs(20),
            follow_links: true,
        }
    }
}

/// One request as the crawler issued it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchTrace {
    pub url: String,
    pub host: String,
    /// Milliseconds from crawl start to the request being sent.
    pub sent_ms: f64,
    /// The pacing delay the crawler was obliged to leave before this
    /// request, measured from the previous request to the same host.
    pub required_gap_ms: f64,
    pub status: Option<u16>,
}

#[derive(Debug, Default)]
pub struct CrawlOutcome {
    pub records: Vec<DatasetRecord>,
    pub trace: Vec<FetchTrace>,
    /// URLs not requested because robots.txt disallows them.
    pub disallowed: Vec<String>,
    pub failures: Vec<(String, String)>,
    /// Hosts whose robots.txt could not be fetched (crawled as allow-all).
    pub robots_missing: Vec<String>,
}

fn host_key(url: &Url) -> String {
    format!(
        "{}://{}:{}",
        url.scheme(),
        url.host_str().unwrap_or(""),
        url.port_or_known_default().unwrap_or(0)
    )
}

/// CSS-like path of classed ancestors, e.g. `div.article-contents > p.post-body`.
fn selector_path(el: &ElementRef<'_>) -> String {
    let mut parts = Vec::new();
    let mut node = Some(*el);
    while let Some(e) = node {
        let v = e.value();
        let classes: Vec<&str> = v.classes().collect();
        if !classes.is_empty() {
            parts.push(format!("{}.{}", v.name(), classes.join(".")));
        }
        node = e.parent().and_then(ElementRef::wrap);
    }
    parts.reverse();
    parts.join(" > ")
}

/// Extracts every post element on a page.
pub fn extract_records(html: &str, url: &str, crawler: &str, crawl_time: u64) -> Vec<DatasetRecord> {
    let doc = Html::parse_document(html);
    let posts = Selector::parse(&format!(".{POST_CLASS}")).expect("static selector");
    doc.select(&posts)
        .map(|el| {
            let content: String = el.text().collect();
            let hash = el
                .value()
                .attr(wire::ATTR_TAG_HASH)
                .and_then(|h| Digest::from_hex(h).ok());
            let sig = el
                .value()
                .attr(wire::ATTR_TAG_SIG)
                .and_then(|s| SignatureBytes::from_hex(s).ok());
            let masked = hash.is_none() && sig.is_none() && content == MASK_PLACEHOLDER;
            DatasetRecord {
                url: url.to_string(),
                selector: selector_path(&el),
                content,
                consent_tag_hash: hash,
                consent_tag_sig: sig,
                crawl_time,
                crawler: crawler.to_string(),
                masked,
            }
        })
        .collect()
}

fn same_host_links(html: &str, base: &Url) -> Vec<Url> {
    let doc = Html::parse_document(html);
    let links = Selector::parse("a[href]").expect("static selector");
    doc.select(&links)
        .filter_map(|a| a.value().attr("href"))
        .filter_map(|href| base.join(href).ok())
        .filter(|u| host_key(u) == host_key(base))
        .map(|mut u| {
            u.set_fragment(None);
            u
        })
        .collect()
}

fn path_and_query(url: &Url) -> String {
    match url.query() {
        Some(q) => format!("{}?{q}", url.path()),
        None => url.path().to_string(),
    }
}

struct HostCrawl<'a> {
    identity: &'a CrawlerIdentity,
    settings: &'a CrawlSettings,
    http: reqwest::Client,
    pacer: HostPacer,
    last_sent: Option<Instant>,
    start: Instant,
    out: CrawlOutcome,
}

impl HostCrawl<'_> {
    /// Waits out the pacing delay, then issues a signed GET.
    async fn fetch(&mut self, url: &Url) -> std::result::Result<(u16, String), String> {
        let gap = self.pacer.delay();
        let required = if self.last_sent.is_some() { gap } else { Duration::ZERO };
        if let Some(prev) = self.last_sent {
            let due = prev + gap;
            let now = Instant::now();
            if due > now {
                tokio::time::sleep(due - now).await;
            }
        }
        let ts = unix_now();
        let sig = sign_timestamp(&self.identity.key, ts);
        let sent = Instant::now();
        self.last_sent = Some(sent);
        let mut trace = FetchTrace {
            url: url.to_string(),
            host: host_key(url),
            sent_ms: sent.duration_since(self.start).as_secs_f64() * 1e3,
            required_gap_ms: required.as_secs_f64() * 1e3,
            status: None,
        };
        let result = self
            .http
            .get(url.clone())
            .header(reqwest::header::USER_AGENT, &self.identity.user_agent)
            .header(wire::CRAWLER_TIMESTAMP, ts.to_string())
            .header(wire::CRAWLER_SIG, sig.to_hex())
            .timeout(self.settings.timeout)
            .send()
            .await;
        let outcome = match result {
            Ok(resp) => {
                let status = resp.status().as_u16();
                trace.status = Some(status);
                match resp.text().await {
                    Ok(body) => Ok((status, body)),
                    Err(e) => Err(e.to_string()),
                }
            }
            Err(e) => Err(e.to_string()),
        };
        let status = outcome.as_ref().map_or(503, |(s, _)| *s);
        self.pacer.observe(sent.elapsed(), status);
        self.out.trace.push(trace);
        outcome
    }

    async fn robots(&mut self, origin: &Url) -> Option<RobotsPolicy> {
        let url = origin.join("/robots.txt").ok()?;
        match self.fetch(&url).await {
            Ok((200, body)) => Some(parse_robots(&body)),
            // Absent robots.txt means no restrictions.
            Ok((404 | 410, _)) => Some(RobotsPolicy::default()),
            Ok((status, _)) => {
                tracing::warn!("{url}: robots.txt status {status}; crawling as allow-all");
                None
            }
            Err(e) => {
                tracing::warn!("{url}: robots.txt unavailable ({e}); crawling as allow-all");
                None
            }
        }
    }

    async fn run(mut self, seeds: Vec<Url>) -> CrawlOutcome {
        let origin = seeds[0].clone();
        let policy = match self.robots(&origin).await {
            Some(p) => p,
            None => {
                self.out.robots_missing.push(host_key(&origin));
                RobotsPolicy::default()
            }
        };
        let mut queue: VecDeque<Url> = seeds.into_iter().collect();
        let mut seen: BTreeSet<String> = queue.iter().map(Url::to_string).collect();
        let mut pages = 0;
        while let Some(url) = queue.pop_front() {
            if pages >= self.settings.max_pages {
                break;
            }
            if !policy.is_path_allowed(&self.identity.name, &path_and_query(&url)) {
                self.out.disallowed.push(url.to_string());
                continue;
            }
            pages += 1;
            let body = match self.fetch(&url).await {
                Ok((200, body)) => body,
                Ok((status, _)) => {
                    self.out.failures.push((url.to_string(), format!("status {status}")));
                    continue;
                }
                Err(e) => {
                    self.out.failures.push((url.to_string(), e));
                    continue;
                }
            };
            self.out
                .records
                .extend(extract_records(&body, url.as_str(), &self.identity.name, unix_now()));
            if self.settings.follow_links {
                for link in same_host_links(&body, &url) {
                    if seen.insert(link.to_string()) {
                        queue.push_back(link);
                    }
                }
            }
        }
        self.out
    }
}

/// Crawls each host's seeds sequentially; hosts run concurrently. Results
/// are merged in order of each host's first seed.
pub async fn crawl_site(seeds: &[Url], identity: &CrawlerIdentity, settings: &CrawlSettings) -> CrawlOutcome {
    let mut by_host: BTreeMap<usize, Vec<Url>> = BTreeMap::new();
    let mut first_index: BTreeMap<String, usize> = BTreeMap::new();
    for (i, s) in seeds.iter().enumerate() {
        let idx = *first_index.entry(host_key(s)).or_insert(i);
        by_host.entry(idx).or_default().push(s.clone());
    }
    let start = Instant::now();
    let crawls = by_host.into_values().map(|host_seeds| {
        HostCrawl {
            identity,
            settings,
            http: direct_client(),
            pacer: HostPacer::new(settings.backoff),
            last_sent: None,
            start,
            out: CrawlOutcome::default(),
        }
        .run(host_seeds)
    });
    let mut out = CrawlOutcome::default();
    for part in futures::future::join_all(crawls).await {
        out.records.extend(part.records);
        out.trace.extend(part.trace);
        out.disallowed.extend(part.disallowed);
        out.failures.extend(part.failures);
        out.robots_missing.extend(part.robots_missing);
    }
    out
}

/// Reads a seeds file: one URL per line, `#` comments allowed.
pub fn read_seeds(path: &Path) -> Result<Vec<Url>> {
    use crate::error::IoContext;
    let text = std::fs::read_to_string(path).at(path)?;
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| Url::parse(l).map_err(|e| Error::Config(format!("seed {l:?}: {e}"))))
        .collect()
}

/// Logs one transfer event per distinct tag in a written dataset, making
/// the crawler a custodian of each. Returns the tags logged.
pub async fn log_transfers(
    ledger: &LedgerClient,
    records: &[DatasetRecord],
    actor: &str,
    dataset_name: &str,
) -> Result<Vec<Digest>> {
    let mut seen = BTreeSet::new();
    let mut logged = Vec::new();
    for hash in records.iter().filter_map(|r| r.consent_tag_hash) {
        if seen.insert(hash) {
            ledger
                .append_event(hash, EventKind::Transfer, actor, &format!("dataset:{dataset_name}"))
                .await?;
            logged.push(hash);
        }
    }
    Ok(logged)
}
