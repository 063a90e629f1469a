//! Client and server overhead micro-benchmarks.
//!
//! Baseline and consent variants are interleaved run by run so drift hits
//! both equally. Every point is the mean over `runs` runs.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::ConnectInfo;
use axum::http::{header, Request, StatusCode};
use serde::{Deserialize, Serialize};
use tower::ServiceExt;

use fishnet_core::agent::CrawlerAgentConfig;
use fishnet_core::client::tag_outgoing_request;
use fishnet_core::request::HttpRequest;
use fishnet_core::{ConsentConfig, Flag, KeyPair};

use crate::error::{Error, Result};
use crate::http1::encode_request;
use crate::server::{ServerConfig, WebServer};

pub const MIN_RUNS: usize = 20;
pub const DEFAULT_CLIENT_SIZES: [usize; 3] = [1 << 10, 100 << 10, 1 << 20];
pub const DEFAULT_SERVER_ROWS: [usize; 3] = [100, 1_000, 10_000];
/// Reference client overhead at 1 MB, for comparison only.
pub const REFERENCE_1MB_OVERHEAD_MS: f64 = 5.0;

const BENCH_CRAWLER: &str = "BenchBot";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub min_ms: f64,
}

impl Stats {
    fn of(samples: &[f64]) -> Stats {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Stats {
            mean_ms: mean,
            sd_ms: var.sqrt(),
            min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    /// Payload bytes or data rows.
    pub x: usize,
    pub runs: usize,
    pub baseline: Stats,
    pub consent: Stats,
}

impl BenchPoint {
    pub fn overhead_ms(&self) -> f64 {
        self.consent.mean_ms - self.baseline.mean_ms
    }

    /// Consent mean relative to baseline mean, minus one.
    pub fn relative_overhead(&self) -> f64 {
        self.consent.mean_ms / self.baseline.mean_ms - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub name: String,
    /// `bytes` or `rows`.
    pub unit: String,
    pub cache: Option<bool>,
    pub points: Vec<BenchPoint>,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut out = format!("{}\n", self.name);
        let _ = writeln!(
            out,
            "{:>10} {:>5} {:>14} {:>14} {:>12} {:>9}",
            self.unit, "runs", "baseline ms", "consent ms", "overhead ms", "overhead"
        );
        for p in &self.points {
            let _ = writeln!(
                out,
                "{:>10} {:>5} {:>14.4} {:>14.4} {:>12.4} {:>8.1}%",
                p.x,
                p.runs,
                p.baseline.mean_ms,
                p.consent.mean_ms,
                p.overhead_ms(),
                p.relative_overhead() * 100.0
            );
        }
        out
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn check_runs(runs: usize) -> Result<()> {
    if runs < MIN_RUNS {
        return Err(Error::Config(format!("at least {MIN_RUNS} runs per point, got {runs}")));
    }
    Ok(())
}

fn payload(size: usize) -> Vec<u8> {
    b"abcdefghijklmnopqrstuvwxyz0123456789 "
        .iter()
        .copied()
        .cycle()
        .take(size)
        .collect()
}

fn build_request(body: &[u8]) -> HttpRequest {
    HttpRequest::new("POST", "http://example.test/submit")
        .header("Content-Type", "text/plain")
        .body(body.to_vec())
}

/// Request invocation versus invocation with tagging: build the request and
/// encode it for the wire, with or without hashing, signing and header
/// injection in between.
pub fn bench_client(sizes: &[usize], runs: usize) -> Result<BenchReport> {
    check_runs(runs)?;
    let key = KeyPair::from_seed(b"bench-client");
    let config = ConsentConfig::new(Flag::Deny).with_rule("Googlebot", Flag::Allow)?;
    let mut points = Vec::new();
    for &size in sizes {
        let body = payload(size);
        let baseline = || {
            let start = Instant::now();
            let wire = encode_request(&build_request(&body));
            let t = start.elapsed();
            std::hint::black_box(wire);
            t
        };
        let consent = || {
            let start = Instant::now();
            let (req, record) = tag_outgoing_request(build_request(&body), &key, &config, 0);
            let wire = encode_request(&req);
            let t = start.elapsed();
            std::hint::black_box((wire, record));
            t
        };
        baseline();
        consent();
        let mut b = Vec::with_capacity(runs);
        let mut c = Vec::with_capacity(runs);
        for i in 0..runs {
            if i % 2 == 0 {
                b.push(ms(baseline()));
                c.push(ms(consent()));
            } else {
                c.push(ms(consent()));
                b.push(ms(baseline()));
            }
        }
        points.push(BenchPoint {
            x: size,
            runs,
            baseline: Stats::of(&b),
            consent: Stats::of(&c),
        });
    }
    Ok(BenchReport {
        name: "client request invocation".into(),
        unit: "bytes".into(),
        cache: None,
        points,
    })
}

/// `rows` tagged submissions; even rows allow the bench crawler.
fn fixture_requests(rows: usize) -> Vec<HttpRequest> {
    let key = KeyPair::from_seed(b"bench-server");
    let allow = ConsentConfig::new(Flag::Deny)
        .with_rule(BENCH_CRAWLER, Flag::Allow)
        .expect("valid name");
    let deny = ConsentConfig::new(Flag::Deny);
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
    let chunk = rows.div_ceil(threads).max(1);
    let indices: Vec<usize> = (0..rows).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|ids| {
                let (key, allow, deny) = (&key, &allow, &deny);
                s.spawn(move || {
                    ids.iter()
                        .map(|&i| {
                            let body = format!("row {i}: {}", "lorem ipsum dolor sit amet ".repeat(4));
                            let config = if i % 2 == 0 { allow } else { deny };
                            tag_outgoing_request(build_request(body.as_bytes()), key, config, 0).0
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("fixture thread"))
            .collect()
    })
}

fn bench_server_instance(consent: bool, cache: bool, fixture: &[HttpRequest]) -> Result<Arc<WebServer>> {
    let crawler = CrawlerAgentConfig {
        name: BENCH_CRAWLER.into(),
        user_agent_pattern: BENCH_CRAWLER.into(),
        ip_ranges: vec!["127.0.0.1/32".parse().expect("static cidr")],
        public_key: KeyPair::from_seed(b"bench-crawler").public_key().clone(),
    };
    let server = WebServer::new(ServerConfig {
        consent,
        cache,
        poll_interval_ms: 0,
        crawlers: vec![crawler],
        ..ServerConfig::default()
    })?;
    for req in fixture {
        server
            .submit(req)
            .map_err(|e| Error::Config(format!("fixture rejected: {e}")))?;
    }
    Ok(server)
}

async fn query(app: &axum::Router) -> Result<usize> {
    let mut req = Request::get("/api/posts")
        .header(
            header::USER_AGENT,
            format!("Mozilla/5.0 (compatible; {BENCH_CRAWLER}/1.0)"),
        )
        .body(Body::empty())
        .expect("static request");
    req.extensions_mut()
        .insert(ConnectInfo(SocketAddr::from(([127, 0, 0, 1], 40_000))));
    let resp = app.clone().oneshot(req).await.expect("infallible router");
    if resp.status() != StatusCode::OK {
        return Err(Error::Config(format!("bench query answered {}", resp.status())));
    }
    let body = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(body.len())
}

/// Queries per timed run. Cached responses are too fast to time singly.
fn queries_per_run(rows: usize, cache: bool) -> usize {
    if cache {
        2_000
    } else {
        (2_000 / rows.max(1)).clamp(1, 200)
    }
}

async fn timed(app: &axum::Router, queries: usize) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..queries {
        std::hint::black_box(query(app).await?);
    }
    Ok(ms(start.elapsed()) / queries as f64)
}

/// Query processing by a server without the consent processor versus one
/// with it, for a registered crawler fetching `/api/posts`, at each row
/// count and cache setting. Requests go through the full router in process,
/// so the figures are server-side processing time without transfer.
pub async fn bench_server(rows: &[usize], caches: &[bool], runs: usize) -> Result<Vec<BenchReport>> {
    check_runs(runs)?;
    let max_rows = rows.iter().copied().max().unwrap_or(0);
    let fixture = fixture_requests(max_rows);
    let mut reports: Vec<BenchReport> = caches
        .iter()
        .map(|&cache| BenchReport {
            name: format!("server query processing, cache {}", if cache { "on" } else { "off" }),
            unit: "rows".into(),
            cache: Some(cache),
            points: Vec::new(),
        })
        .collect();
    for &n in rows {
        for (report, &cache) in reports.iter_mut().zip(caches) {
            let plain = bench_server_instance(false, cache, &fixture[..n])?.router();
            let with_consent = bench_server_instance(true, cache, &fixture[..n])?.router();
            let q = queries_per_run(n, cache);
            timed(&plain, q).await?;
            timed(&with_consent, q).await?;
            let mut b = Vec::with_capacity(runs);
            let mut c = Vec::with_capacity(runs);
            for i in 0..runs {
                if i % 2 == 0 {
                    b.push(timed(&plain, q).await?);
                    c.push(timed(&with_consent, q).await?);
                } else {
                    c.push(timed(&with_consent, q).await?);
                    b.push(timed(&plain, q).await?);
                }
            }
            report.points.push(BenchPoint {
                x: n,
                runs,
                baseline: Stats::of(&b),
                consent: Stats::of(&c),
            });
        }
    }
    Ok(reports)
}
