use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::OsRng;

use fishnet::bench::{self, BenchReport};
use fishnet::crawler::{crawl_site, log_transfers, read_seeds, CrawlSettings, CrawlerIdentity};
use fishnet::dataset_io::{write_dataset, DatasetSummary};
use fishnet::keystore::{read_key_file, Keystore, RecordFilter, KEYSTORE_ENV};
use fishnet::ledger_http::{LedgerClient, LedgerOptions, LedgerService};
use fishnet::ml_party::MlParty;
use fishnet::scenario::{run_scenario, ScenarioSpec};
use fishnet::server::{ServerConfig, WebServer, AUTHOR_HEADER};
use fishnet::{jsonl, proxy, unix_now, Error};
use fishnet_core::agent::{Cidr, CrawlerAgentConfig};
use fishnet_core::client::tag_outgoing_request;
use fishnet_core::consent::wire;
use fishnet_core::request::HttpRequest;
use fishnet_core::{ConsentConfig, Digest, KeyPair};

/// Consent tagging for web content: user tools, party daemons, scenario
/// runner and benchmarks.
#[derive(Parser)]
#[command(name = "fishnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct KeystoreArg {
    /// Keystore directory.
    #[arg(long, env = KEYSTORE_ENV, default_value = "fishnet-keystore")]
    keystore: PathBuf,
}

#[derive(Args)]
struct LedgerArg {
    /// Ledger base URL.
    #[arg(long, env = "FISHNET_LEDGER", default_value = "http://127.0.0.1:7545")]
    ledger: String,
}

#[derive(Subcommand)]
enum Command {
    /// Create a signing key, in a keystore or as a bare key file.
    Keygen {
        #[command(flatten)]
        keystore: KeystoreArg,
        /// Write a bare key file here instead of initializing the keystore.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Show or set the consent config, e.g. `Googlebot:1;GPTBot:0;default:0`.
    Config {
        #[command(flatten)]
        keystore: KeystoreArg,
        header: Option<String>,
    },
    /// Send one tagged data request and keep its consent record.
    Post {
        #[command(flatten)]
        keystore: KeystoreArg,
        url: String,
        /// Body text; read from stdin when absent and --file is not given.
        #[arg(long, conflicts_with = "file")]
        body: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value = "POST")]
        method: String,
        #[arg(long)]
        author: Option<String>,
        /// Mark the data non-crawlable instead of tagging it.
        #[arg(long)]
        non_crawlable: bool,
    },
    /// Show the ledger journey of local consent records.
    Track {
        #[command(flatten)]
        keystore: KeystoreArg,
        #[command(flatten)]
        ledger: LedgerArg,
        /// Tag hash; all matching records when absent.
        #[arg(long)]
        hash: Option<String>,
        #[arg(long)]
        url_contains: Option<String>,
        #[arg(long)]
        since: Option<u64>,
        #[arg(long)]
        until: Option<u64>,
    },
    /// Withdraw consent for a tag.
    Withdraw {
        #[command(flatten)]
        keystore: KeystoreArg,
        #[command(flatten)]
        ledger: LedgerArg,
        hash: String,
    },
    /// Run the tagging forward proxy.
    Proxy {
        #[command(flatten)]
        keystore: KeystoreArg,
        #[arg(long, env = "FISHNET_PROXY_LISTEN", default_value = "127.0.0.1:8888")]
        listen: SocketAddr,
    },
    /// Run the web server.
    Serve {
        /// TOML server config.
        #[arg(long, env = "FISHNET_SERVER_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "FISHNET_PORT")]
        port: Option<u16>,
        /// Ledger base URL; overrides the config file.
        #[arg(long, env = "FISHNET_LEDGER")]
        ledger: Option<String>,
    },
    /// Run the ledger service.
    Ledger {
        #[arg(long, env = "FISHNET_LEDGER_LISTEN", default_value = "127.0.0.1:7545")]
        listen: SocketAddr,
        #[arg(long, env = "FISHNET_SEED", default_value_t = 0)]
        seed: u64,
        /// Append every state-changing call here, replaying it on start.
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Artificial confirmation latency per write, in milliseconds.
        #[arg(long, default_value_t = 0)]
        latency_ms: u64,
    },
    /// Register a crawler identity on the ledger.
    RegisterAgent {
        #[command(flatten)]
        ledger: LedgerArg,
        #[arg(long)]
        name: String,
        /// User-agent substring; defaults to the name.
        #[arg(long)]
        pattern: Option<String>,
        /// Source range in CIDR notation; repeatable.
        #[arg(long = "ip-range", required = true)]
        ip_ranges: Vec<Cidr>,
        /// Crawler key file from `keygen --out`.
        #[arg(long)]
        key: PathBuf,
    },
    /// Crawl seed URLs into a dataset file.
    Crawl {
        #[arg(long)]
        name: String,
        #[arg(long)]
        key: PathBuf,
        /// File with one seed URL per line.
        #[arg(long)]
        seeds: PathBuf,
        /// Output dataset, gzip-compressed JSON lines.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_pages: usize,
        /// Log a transfer event per dataset tag to this ledger.
        #[arg(long, env = "FISHNET_LEDGER")]
        ledger: Option<String>,
    },
    /// Ingest datasets into an ML party's stores.
    Ingest {
        #[arg(long)]
        party: String,
        #[arg(long)]
        dir: PathBuf,
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long, env = "FISHNET_LEDGER")]
        ledger: Option<String>,
    },
    /// Act on withdrawals for a custodian's stores and datasets.
    Watch {
        #[command(flatten)]
        ledger: LedgerArg,
        #[arg(long)]
        party: String,
        #[arg(long)]
        dir: PathBuf,
        /// Dataset files held by this party.
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        #[arg(long, default_value_t = 500)]
        interval_ms: u64,
        /// Poll once and exit.
        #[arg(long)]
        once: bool,
    },
    /// Run every party end to end and audit the outcome.
    Scenario {
        /// TOML scenario spec; the reference scenario when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Working directory; a temporary one when absent.
        #[arg(long)]
        workdir: Option<PathBuf>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Client overhead of tagging, by payload size.
    BenchClient {
        /// Payload sizes in bytes.
        #[arg(long, value_delimiter = ',', default_values_t = bench::DEFAULT_CLIENT_SIZES)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = bench::MIN_RUNS)]
        runs: usize,
        /// Write the JSON data file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Server overhead of consent processing, by row count.
    BenchServer {
        #[arg(long, value_delimiter = ',', default_values_t = bench::DEFAULT_SERVER_ROWS)]
        rows: Vec<usize>,
        #[arg(long, value_enum, default_value_t = CacheMode::Both)]
        cache: CacheMode,
        #[arg(long, default_value_t = bench::MIN_RUNS)]
        runs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CacheMode {
    On,
    Off,
    Both,
}

/// Exit status for a failure: 2 for bad input, 1 otherwise.
fn failure_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Consent(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FISHNET_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure_code(&e))
        }
    }
}

fn parse_hash(s: &str) -> anyhow::Result<Digest> {
    Digest::from_hex(s.trim_start_matches("0x")).map_err(|e| Error::Config(format!("tag hash {s:?}: {e}")).into())
}

async fn wait_for_ctrl_c(what: &str, addr: SocketAddr) -> anyhow::Result<ExitCode> {
    eprintln!("{what} listening on {addr}");
    tokio::signal::ctrl_c().await.context("waiting for ctrl-c")?;
    Ok(ExitCode::SUCCESS)
}

fn write_bench(reports: &[BenchReport], out: Option<&Path>) -> anyhow::Result<()> {
    for r in reports {
        println!("{}", r.table());
    }
    if let Some(path) = out {
        jsonl::write_json(path, &reports)?;
        eprintln!("data written to {}", path.display());
    }
    Ok(())
}

async fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Keygen { keystore, out, force } => {
            let key = KeyPair::generate(&mut OsRng);
            match out {
                Some(path) => {
                    if path.exists() && !force {
                        bail!("{} exists; pass --force to replace it", path.display());
                    }
                    std::fs::write(&path, key.secret_hex() + "\n").with_context(|| path.display().to_string())?;
                }
                None => Keystore::open(keystore.keystore).init(&key, force)?,
            }
            println!("{}", key.public_key().to_hex());
        }
        Command::Config { keystore, header } => {
            let ks = Keystore::open(keystore.keystore);
            if let Some(h) = header {
                ks.set_config(&ConsentConfig::parse(&h).map_err(Error::from)?)?;
            }
            println!("{}", ks.config()?.serialize());
        }
        Command::Post {
            keystore,
            url,
            body,
            file,
            method,
            author,
            non_crawlable,
        } => {
            let ks = Keystore::open(keystore.keystore);
            let body = match (body, file) {
                (Some(b), _) => b.into_bytes(),
                (None, Some(f)) => std::fs::read(&f).with_context(|| f.display().to_string())?,
                (None, None) => {
                    let mut buf = Vec::new();
                    std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf)?;
                    buf
                }
            };
            let mut req = HttpRequest::new(&method.to_ascii_uppercase(), &url).body(body);
            if let Some(a) = &author {
                req.headers.insert(AUTHOR_HEADER, a.as_str());
            }
            if non_crawlable {
                req.headers.insert(wire::NON_CRAWLABLE, "1");
            }
            let (req, record) = tag_outgoing_request(req, &ks.key()?, &ks.config()?, unix_now());
            if let Some(r) = &record {
                ks.append_record(r)?;
            }
            let method = reqwest::Method::from_bytes(req.method.as_bytes()).context("method")?;
            let mut out = reqwest::Client::new().request(method, &req.url);
            for (name, value) in req.headers.iter() {
                out = out.header(name, value);
            }
            let resp = out.body(req.body).send().await?;
            let status = resp.status();
            let text = resp.text().await.unwrap_or_default();
            println!("{status} {text}");
            if let Some(r) = record {
                println!("tag {}", r.hash);
            }
            if !status.is_success() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Track {
            keystore,
            ledger,
            hash,
            url_contains,
            since,
            until,
        } => {
            let ks = Keystore::open(keystore.keystore);
            let client = LedgerClient::new(&ledger.ledger);
            let records = match hash {
                Some(h) => vec![ks.find(&parse_hash(&h)?)?],
                None => {
                    let (records, skipped) = ks.list_records(&RecordFilter {
                        url_contains,
                        since,
                        until,
                    })?;
                    if skipped > 0 {
                        eprintln!("{skipped} unreadable records skipped");
                    }
                    records
                }
            };
            for r in &records {
                let journey = client.track_journey(r).await?;
                println!("{} {} {}", r.hash, r.method, r.url);
                if journey.events.is_empty() {
                    println!("  (no ledger events)");
                }
                for e in &journey.events {
                    let detail = if e.detail.is_empty() {
                        String::new()
                    } else {
                        format!(" {}", e.detail)
                    };
                    println!("  {:>6} {:<22} {}{detail}", e.seq, e.kind.as_str(), e.actor);
                }
            }
        }
        Command::Withdraw { keystore, ledger, hash } => {
            let ks = Keystore::open(keystore.keystore);
            let record = ks.find(&parse_hash(&hash)?)?;
            let receipt = LedgerClient::new(&ledger.ledger)
                .request_withdrawal(&record, &ks.key()?)
                .await?;
            let note = if receipt.duplicate { " (already requested)" } else { "" };
            println!(
                "withdrawal of {} recorded at seq {}{note}",
                receipt.tag_hash, receipt.seq
            );
        }
        Command::Proxy { keystore, listen } => {
            let ks = Keystore::open(keystore.keystore);
            ks.key().context("proxy needs a keystore with a key")?;
            let addr = proxy::spawn(ks, listen).await?;
            return wait_for_ctrl_c("tagging proxy", addr).await;
        }
        Command::Serve { config, port, ledger } => {
            let mut cfg = match config {
                Some(path) => ServerConfig::load(&path)?,
                None => ServerConfig::default(),
            };
            if let Some(p) = port {
                cfg.port = p;
            }
            if ledger.is_some() {
                cfg.ledger = ledger;
            }
            let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
            let server = WebServer::new(cfg)?;
            let bound = server.spawn(addr).await?;
            return wait_for_ctrl_c("web server", bound).await;
        }
        Command::Ledger {
            listen,
            seed,
            journal,
            latency_ms,
        } => {
            let service = LedgerService::new(LedgerOptions {
                seed,
                journal,
                latency: Duration::from_millis(latency_ms),
            })?;
            let addr = service.spawn(listen).await?;
            return wait_for_ctrl_c("ledger", addr).await;
        }
        Command::RegisterAgent {
            ledger,
            name,
            pattern,
            ip_ranges,
            key,
        } => {
            let key = read_key_file(&key)?;
            let config = CrawlerAgentConfig {
                user_agent_pattern: pattern.unwrap_or_else(|| name.clone()),
                name,
                ip_ranges,
                public_key: key.public_key().clone(),
            };
            config.validate().map_err(|e| Error::Config(e.to_string()))?;
            let version = LedgerClient::new(&ledger.ledger).register_agent(&config).await?;
            println!("registered {} (registry version {version})", config.name);
        }
        Command::Crawl {
            name,
            key,
            seeds,
            out,
            max_pages,
            ledger,
        } => {
            let identity = CrawlerIdentity::new(&name, read_key_file(&key)?);
            let seeds = read_seeds(&seeds)?;
            let settings = CrawlSettings {
                max_pages,
                ..CrawlSettings::default()
            };
            let outcome = crawl_site(&seeds, &identity, &settings).await;
            let DatasetSummary { count, bytes } = write_dataset(&outcome.records, &out)?;
            println!(
                "{} requests, {count} records ({bytes} bytes) to {}; {} disallowed by robots.txt, {} failures",
                outcome.trace.len(),
                out.display(),
                outcome.disallowed.len(),
                outcome.failures.len()
            );
            for (url, why) in &outcome.failures {
                eprintln!("failed {url}: {why}");
            }
            if let Some(l) = ledger {
                let dataset = out.file_name().and_then(|n| n.to_str()).unwrap_or("dataset");
                let logged = log_transfers(&LedgerClient::new(&l), &outcome.records, &name, dataset).await?;
                println!("{} transfer events logged", logged.len());
            }
        }
        Command::Ingest {
            party,
            dir,
            datasets,
            ledger,
        } => {
            let client = ledger.map(|l| LedgerClient::new(&l));
            let mut ml = MlParty::open(&party, dir)?;
            for path in &datasets {
                let s = ml.ingest_dataset(path, client.as_ref()).await?;
                println!(
                    "{}: read {}, ingested {}, duplicates {}, masked {}, withdrawn {}, quarantined {}",
                    path.display(),
                    s.read,
                    s.ingested,
                    s.duplicates,
                    s.masked_skipped,
                    s.withdrawn_skipped,
                    s.quarantined.len()
                );
                for q in &s.quarantined {
                    eprintln!("  quarantined record {} ({}): {:?}", q.index, q.url, q.reason);
                }
            }
        }
        Command::Watch {
            ledger,
            party,
            dir,
            datasets,
            interval_ms,
            once,
        } => {
            let client = LedgerClient::new(&ledger.ledger);
            let mut custodian = MlParty::open(&party, dir)?.with_datasets(datasets);
            loop {
                match custodian.poll_once(&client).await {
                    Ok(handled) => {
                        for h in handled {
                            println!(
                                "withdrawn {}: {} training items, {} dataset records removed",
                                h.tag, h.training_items_removed, h.dataset_records_removed
                            );
                        }
                    }
                    Err(e) if !once => tracing::warn!("poll failed: {e}"),
                    Err(e) => return Err(e.into()),
                }
                if once {
                    break;
                }
                tokio::select! {
                    _ = tokio::time::sleep(Duration::from_millis(interval_ms)) => {}
                    _ = tokio::signal::ctrl_c() => break,
                }
            }
        }
        Command::Scenario { spec, workdir, out } => {
            let spec = match spec {
                Some(path) => ScenarioSpec::load(&path)?,
                None => ScenarioSpec::default(),
            };
            spec.validate()?;
            let temp;
            let dir = match workdir {
                Some(d) => d,
                None => {
                    temp = tempfile::tempdir()?;
                    temp.path().to_path_buf()
                }
            };
            let report = run_scenario(&spec, &dir).await?;
            for c in &report.checks {
                let mark = if c.passed { "pass" } else { "FAIL" };
                println!("{mark}  {}", c.name);
                if !c.passed {
                    println!("      {}", c.detail);
                }
            }
            for w in &report.withdrawals {
                println!(
                    "withdrawal user {} post {}: {} custodians {:?}, completed {}",
                    w.user, w.post, w.tag, w.custodians, w.completed
                );
            }
            println!("{} posts, elapsed {} ms", report.posts, report.timing.elapsed_ms);
            if let Some(path) = out {
                jsonl::write_json(&path, &report)?;
            }
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::BenchClient { sizes, runs, out } => {
            let report = bench::bench_client(&sizes, runs)?;
            write_bench(std::slice::from_ref(&report), out.as_deref())?;
            if let Some(p) = report.points.iter().find(|p| p.x == 1 << 20) {
                println!(
                    "1 MB overhead {:.2} ms (reference figure about {} ms)",
                    p.overhead_ms(),
                    bench::REFERENCE_1MB_OVERHEAD_MS
                );
            }
        }
        Command::BenchServer { rows, cache, runs, out } => {
            let caches: &[bool] = match cache {
                CacheMode::On => &[true],
                CacheMode::Off => &[false],
                CacheMode::Both => &[false, true],
            };
            let reports = bench::bench_server(&rows, caches, runs).await?;
            write_bench(&reports, out.as_deref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
