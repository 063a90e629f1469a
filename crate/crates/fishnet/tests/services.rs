use std::net::SocketAddr;
use std::time::Duration;

use reqwest::{StatusCode, Url};

use fishnet::crawler::{crawl_site, log_transfers, CrawlSettings, CrawlerIdentity};
use fishnet::keystore::{Keystore, RecordFilter};
use fishnet::ledger_http::{read_journal, LedgerClient, LedgerOptions, LedgerService};
use fishnet::proxy;
use fishnet::queue::{LedgerOp, LedgerQueue};
use fishnet::server::{ServerConfig, WebServer, AUTHOR_HEADER};
use fishnet::Error;
use fishnet_core::agent::{sign_timestamp, CrawlerAgentConfig};
use fishnet_core::client::tag_outgoing_request;
use fishnet_core::consent::{wire, MASK_PLACEHOLDER};
use fishnet_core::ledger::{EventKind, TagBatchEntry, WithdrawalState};
use fishnet_core::request::HttpRequest;
use fishnet_core::site::ApiItem;
use fishnet_core::{keccak256, ConsentConfig, KeyPair};

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

/// An address nothing listens on yet.
fn free_addr() -> SocketAddr {
    std::net::TcpListener::bind(loopback()).unwrap().local_addr().unwrap()
}

fn googlebot(key: &KeyPair, range: &str) -> CrawlerAgentConfig {
    CrawlerAgentConfig {
        name: "Googlebot".into(),
        user_agent_pattern: "Googlebot".into(),
        ip_ranges: vec![range.parse().unwrap()],
        public_key: key.public_key().clone(),
    }
}

fn tagged(url: &str, body: &str, key: &KeyPair, header: &str) -> HttpRequest {
    let req = HttpRequest::new("POST", url).body(body.to_string());
    tag_outgoing_request(req, key, &ConsentConfig::parse(header).unwrap(), 0).0
}

async fn start_ledger(options: LedgerOptions) -> (LedgerService, LedgerClient) {
    let service = LedgerService::new(options).unwrap();
    let addr = service.spawn(loopback()).await.unwrap();
    (service, LedgerClient::new(&format!("http://{addr}")))
}

fn client() -> reqwest::Client {
    reqwest::Client::builder().no_proxy().build().unwrap()
}

#[tokio::test]
async fn ledger_restart_replays_its_journal() {
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");
    let options = LedgerOptions {
        seed: 3,
        journal: Some(journal.clone()),
        ..LedgerOptions::default()
    };
    let user = KeyPair::from_seed(b"user");
    let req = tagged("http://site/submit", "hello", &user, "default:1");
    let (_, record) = tag_outgoing_request(req.clone(), &user, &ConsentConfig::default(), 0);
    let record = record.unwrap();

    let (first, ledger) = start_ledger(options.clone()).await;
    ledger
        .submit_tag_batch(vec![TagBatchEntry {
            hash: record.hash,
            sig: record.sig.clone(),
            custodian: "web-server".into(),
        }])
        .await
        .unwrap();
    ledger
        .append_event(record.hash, EventKind::Crawl, "Googlebot", "/posts")
        .await
        .unwrap();
    let receipt = ledger.request_withdrawal(&record, &user).await.unwrap();
    assert!(!receipt.duplicate);
    let again = ledger.request_withdrawal(&record, &user).await.unwrap();
    assert!(again.duplicate);
    assert_eq!(again.seq, receipt.seq);

    let (second, restarted) = start_ledger(options).await;
    assert_eq!(
        serde_json::to_string(first.snapshot().events()).unwrap(),
        serde_json::to_string(second.snapshot().events()).unwrap()
    );
    let journey = restarted.track_journey(&record).await.unwrap();
    let kinds: Vec<EventKind> = journey.events.iter().map(|e| e.kind).collect();
    assert_eq!(kinds, [EventKind::Crawl, EventKind::WithdrawalRequested]);
    assert_eq!(read_journal(&journal).unwrap().len(), 6);
}

#[tokio::test]
async fn call_that_cannot_be_journaled_is_not_applied() {
    let dir = tempfile::tempdir().unwrap();
    let (service, ledger) = start_ledger(LedgerOptions {
        journal: Some(dir.path().join("no-such-dir").join("journal.jsonl")),
        ..LedgerOptions::default()
    })
    .await;
    match ledger.issue_challenge().await {
        Err(Error::Ledger { status: 503, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(service.snapshot().current_seq(), 0);
}

#[tokio::test]
async fn ledger_lookups_and_bad_input() {
    let (_, ledger) = start_ledger(LedgerOptions::default()).await;
    assert!(ledger.query_tag(&keccak256(b"nothing")).await.unwrap().is_none());
    let resp = client()
        .get(format!("{}/tags/XYZ", ledger.base()))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    match ledger.submit_tag_batch(Vec::new()).await {
        Err(Error::Ledger { status: 400, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn queue_holds_writes_until_the_ledger_appears() {
    let dir = tempfile::tempdir().unwrap();
    let addr = free_addr();
    let server = WebServer::new(ServerConfig {
        ledger: Some(format!("http://{addr}")),
        data_dir: Some(dir.path().join("server")),
        poll_interval_ms: 0,
        ..ServerConfig::default()
    })
    .unwrap();
    let user = KeyPair::from_seed(b"user");
    let sub = server
        .submit(&tagged("http://site/submit", "queued post", &user, "default:1"))
        .unwrap();
    let hash = sub.tag_hash.unwrap();
    assert!(matches!(
        server.flush(Duration::from_millis(300)).await,
        Err(Error::Timeout(_))
    ));
    let saved = std::fs::read_to_string(dir.path().join("server/ledger-queue.jsonl")).unwrap();
    assert!(saved.contains(&hash.to_hex()));

    let service = LedgerService::new(LedgerOptions::default()).unwrap();
    service.spawn(addr).await.unwrap();
    server.flush(Duration::from_secs(20)).await.unwrap();
    let entry = service.snapshot().query_tag(&hash).unwrap();
    assert!(entry.custodians.contains("web-server"));
}

#[tokio::test]
async fn queue_file_is_resumed_on_restart() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("queue.jsonl");
    let nowhere = LedgerClient::new(&format!("http://{}", free_addr()));
    let ops: Vec<LedgerOp> = (0..3u8)
        .map(|i| LedgerOp::Event {
            tag: keccak256(&[i]),
            kind: EventKind::Transfer,
            actor: "crawler".into(),
            detail: String::new(),
        })
        .collect();
    let queue = LedgerQueue::start(nowhere.clone(), Some(file.clone())).unwrap();
    queue.push_all(ops.clone());
    assert_eq!(queue.len(), 3);
    let resumed = LedgerQueue::start(nowhere, Some(file)).unwrap();
    assert_eq!(resumed.len(), 3);
}

#[tokio::test]
async fn server_admits_only_verified_crawlers() {
    let key = KeyPair::from_seed(b"google");
    let server = WebServer::new(ServerConfig {
        crawlers: vec![googlebot(&key, "127.0.0.1/32")],
        poll_interval_ms: 0,
        robots: "User-agent: *\nDisallow: /private/\n".into(),
        ..ServerConfig::default()
    })
    .unwrap();
    let site = format!("http://{}", server.spawn(loopback()).await.unwrap());
    let user = KeyPair::from_seed(b"user");
    let http = client();
    for (body, header) in [("shared", "Googlebot:1"), ("private", "Googlebot:0")] {
        let req = tagged(&format!("{site}/submit"), body, &user, header);
        let mut out = http.post(&req.url).header(AUTHOR_HEADER, "u");
        for (n, v) in req.headers.iter() {
            out = out.header(n, v);
        }
        assert!(out.body(req.body).send().await.unwrap().status().is_success());
    }

    let get = |ua: &str, ts: Option<String>, sig: Option<String>| {
        let mut req = http.get(format!("{site}/api/posts")).header("User-Agent", ua);
        if let Some(ts) = ts {
            req = req.header(wire::CRAWLER_TIMESTAMP, ts);
        }
        if let Some(sig) = sig {
            req = req.header(wire::CRAWLER_SIG, sig);
        }
        req.send()
    };
    let ua = "Mozilla/5.0 (compatible; Googlebot/2.1)";
    let now = fishnet::unix_now();

    let resp = get(ua, None, None).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let items: Vec<ApiItem> = resp.json().await.unwrap();
    assert_eq!(items[0].content, "shared");
    assert!(items[0].consent_tag_hash.is_some());
    assert_eq!(items[1].content, MASK_PLACEHOLDER);

    let signed = get(ua, Some(now.to_string()), Some(sign_timestamp(&key, now).to_hex()));
    assert_eq!(signed.await.unwrap().status(), StatusCode::OK);
    let forged = sign_timestamp(&KeyPair::from_seed(b"other"), now).to_hex();
    assert_eq!(
        get(ua, Some(now.to_string()), Some(forged)).await.unwrap().status(),
        StatusCode::FORBIDDEN
    );
    let stale = now - 3600;
    let old = get(ua, Some(stale.to_string()), Some(sign_timestamp(&key, stale).to_hex()));
    assert_eq!(old.await.unwrap().status(), StatusCode::FORBIDDEN);

    let browser: Vec<ApiItem> = get("Mozilla/5.0 Firefox/128.0", None, None)
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(
        browser.iter().map(|i| i.content.as_str()).collect::<Vec<_>>(),
        ["shared", "private"]
    );
    assert!(browser.iter().all(|i| i.consent_tag_hash.is_none()));

    let robots = http
        .get(format!("{site}/robots.txt"))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert!(robots.contains("Disallow: /private/"));
    let log = server.access_log();
    assert!(log.iter().any(|r| r.status == 403 && r.user_agent == ua));
    assert!(log.iter().any(|r| r.path == "/robots.txt"));
}

#[tokio::test]
async fn crawler_from_outside_its_range_is_refused() {
    let key = KeyPair::from_seed(b"google");
    let server = WebServer::new(ServerConfig {
        crawlers: vec![googlebot(&key, "66.249.64.0/19")],
        poll_interval_ms: 0,
        ..ServerConfig::default()
    })
    .unwrap();
    let site = format!("http://{}", server.spawn(loopback()).await.unwrap());
    let resp = client()
        .get(format!("{site}/posts"))
        .header("User-Agent", "Googlebot/2.1")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn server_store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServerConfig {
        data_dir: Some(dir.path().to_path_buf()),
        poll_interval_ms: 0,
        ..ServerConfig::default()
    };
    let user = KeyPair::from_seed(b"user");
    let first = WebServer::new(config.clone()).unwrap();
    let sub = first
        .submit(&tagged("http://site/submit", "kept", &user, "default:1"))
        .unwrap();
    drop(first);
    let again = WebServer::new(config).unwrap();
    assert!(again.store().holds_hash(&sub.tag_hash.unwrap()));
}

#[tokio::test]
async fn withdrawal_removes_server_data_and_reports() {
    let (service, ledger) = start_ledger(LedgerOptions::default()).await;
    let key = KeyPair::from_seed(b"google");
    let server = WebServer::new(ServerConfig {
        ledger: Some(ledger.base().to_string()),
        crawlers: vec![googlebot(&key, "127.0.0.1/32")],
        poll_interval_ms: 0,
        ..ServerConfig::default()
    })
    .unwrap();
    let site = format!("http://{}", server.spawn(loopback()).await.unwrap());
    let user = KeyPair::from_seed(b"user");
    let req = tagged(&format!("{site}/submit"), "to be withdrawn", &user, "default:1");
    let (_, record) = tag_outgoing_request(req.clone(), &user, &ConsentConfig::default(), 0);
    let record = record.unwrap();
    server.submit(&req).unwrap();

    let identity = CrawlerIdentity::new("Googlebot", key);
    let seeds = [Url::parse(&format!("{site}/posts")).unwrap()];
    let outcome = crawl_site(&seeds, &identity, &CrawlSettings::default()).await;
    assert_eq!(outcome.records.len(), 1);
    assert_eq!(
        log_transfers(&ledger, &outcome.records, "Googlebot", "dataset")
            .await
            .unwrap()
            .len(),
        1
    );
    server.flush(Duration::from_secs(10)).await.unwrap();

    ledger.request_withdrawal(&record, &user).await.unwrap();
    assert_eq!(server.process_withdrawals().await.unwrap(), [record.hash]);
    assert!(!server.store().holds_hash(&record.hash));
    assert!(server.process_withdrawals().await.unwrap().is_empty());
    let entry = service.snapshot().query_tag(&record.hash).unwrap();
    match entry.withdrawal {
        WithdrawalState::Requested { awaiting, .. } => {
            assert_eq!(awaiting.into_iter().collect::<Vec<_>>(), ["Googlebot"])
        }
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn proxy_tags_data_requests_only() {
    let dir = tempfile::tempdir().unwrap();
    let server = WebServer::new(ServerConfig {
        poll_interval_ms: 0,
        ..ServerConfig::default()
    })
    .unwrap();
    let site = format!("http://{}", server.spawn(loopback()).await.unwrap());
    let ks = Keystore::open(dir.path());
    ks.init(&KeyPair::from_seed(b"user"), false).unwrap();
    ks.set_config(&ConsentConfig::parse("Googlebot:1;default:0").unwrap())
        .unwrap();
    let addr = proxy::spawn(Keystore::open(dir.path()), loopback()).await.unwrap();
    let via = reqwest::Client::builder()
        .proxy(reqwest::Proxy::http(format!("http://{addr}")).unwrap())
        .build()
        .unwrap();

    let resp = via
        .post(format!("{site}/submit"))
        .body("through the proxy")
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_success());
    via.post(format!("{site}/submit"))
        .header(wire::NON_CRAWLABLE, "1")
        .body("not for crawlers")
        .send()
        .await
        .unwrap();
    let page = via.get(format!("{site}/posts")).send().await.unwrap();
    assert_eq!(page.status(), StatusCode::OK);

    let (records, _) = ks.list_records(&RecordFilter::default()).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].hash, keccak256(b"through the proxy"));
    assert!(records[0].verifies());
    let store = server.store();
    assert!(store.holds_hash(&records[0].hash));
    assert_eq!(store.consents().count(), 1);
    assert_eq!(store.consents().next().unwrap().signature, records[0].sig);
}

#[tokio::test]
async fn proxy_without_a_key_sends_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let server = WebServer::new(ServerConfig {
        poll_interval_ms: 0,
        ..ServerConfig::default()
    })
    .unwrap();
    let site = format!("http://{}", server.spawn(loopback()).await.unwrap());
    let addr = proxy::spawn(Keystore::open(dir.path()), loopback()).await.unwrap();
    let via = reqwest::Client::builder()
        .proxy(reqwest::Proxy::http(format!("http://{addr}")).unwrap())
        .build()
        .unwrap();
    let resp = via
        .post(format!("{site}/submit"))
        .body("untaggable")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_GATEWAY);
    assert!(server.access_log().is_empty());
}

#[tokio::test]
async fn missing_robots_means_allow_all() {
    let app = axum::Router::new().route(
        "/page",
        axum::routing::get(|| async { axum::response::Html("<p class=\"post-body\">hi</p>") }),
    );
    let listener = tokio::net::TcpListener::bind(loopback()).await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await });
    let identity = CrawlerIdentity::new("Googlebot", KeyPair::from_seed(b"g"));
    let seeds = [Url::parse(&format!("http://{addr}/page")).unwrap()];
    let outcome = crawl_site(&seeds, &identity, &CrawlSettings::default()).await;
    assert!(outcome.disallowed.is_empty() && outcome.robots_missing.is_empty());
    assert_eq!(outcome.records.len(), 1);
    assert_eq!(outcome.trace[0].status, Some(404));
}

#[tokio::test]
async fn unreachable_host_is_reported_not_fatal() {
    let identity = CrawlerIdentity::new("Googlebot", KeyPair::from_seed(b"g"));
    let seeds = [Url::parse(&format!("http://{}/", free_addr())).unwrap()];
    let settings = CrawlSettings {
        timeout: Duration::from_secs(2),
        ..CrawlSettings::default()
    };
    let outcome = crawl_site(&seeds, &identity, &settings).await;
    assert_eq!(outcome.robots_missing.len(), 1);
    assert_eq!(outcome.failures.len(), 1);
    assert!(outcome.records.is_empty());
}
