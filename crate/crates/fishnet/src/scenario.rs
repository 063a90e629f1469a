//! End-to-end run of every party over loopback HTTP: users post through
//! tagging proxies, crawlers crawl, ML parties ingest, users withdraw, and
//! the result is audited against independently computed expectations.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use fishnet_core::agent::CrawlerAgentConfig;
use fishnet_core::client::LocalConsentRecord;
use fishnet_core::dataset::DatasetRecord;
use fishnet_core::ledger::{EventKind, TagLedgerEntry, WithdrawalState};
use fishnet_core::site::ApiItem;
use fishnet_core::{keccak256, ConsentConfig, Digest, KeyPair};

use crate::crawler::{crawl_site, log_transfers, CrawlSettings, CrawlerIdentity};
use crate::dataset_io::{read_dataset, write_dataset};
use crate::error::{Error, IoContext, Result};
use crate::keystore::{Keystore, RecordFilter};
use crate::ledger_http::{direct_client, LedgerClient, LedgerOptions, LedgerService};
use crate::ml_party::MlParty;
use crate::proxy;
use crate::server::{ServerConfig, WebServer, AUTHOR_HEADER};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlerSpec {
    pub name: String,
    /// How many users' consent configs allow this crawler.
    pub allowed_in: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawalSpec {
    pub user: usize,
    pub post: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub users: usize,
    pub posts_per_user: usize,
    /// Explicit consent header per user; generated from `crawlers` if empty.
    #[serde(default)]
    pub user_configs: Vec<String>,
    pub crawlers: Vec<CrawlerSpec>,
    pub ml_parties: Vec<String>,
    #[serde(default)]
    pub withdrawals: Vec<WithdrawalSpec>,
}

impl Default for ScenarioSpec {
    /// Two users with two posts each; Googlebot allowed by one user, GPTBot
    /// by none; one ML party; the first user withdraws their first post.
    fn default() -> Self {
        ScenarioSpec {
            seed: 7,
            users: 2,
            posts_per_user: 2,
            user_configs: Vec::new(),
            crawlers: vec![
                CrawlerSpec {
                    name: "Googlebot".into(),
                    allowed_in: 1,
                },
                CrawlerSpec {
                    name: "GPTBot".into(),
                    allowed_in: 0,
                },
            ],
            ml_parties: vec!["ml-lab".into()],
            withdrawals: vec![WithdrawalSpec { user: 0, post: 0 }],
        }
    }
}

const ROBOTS: &str = "User-agent: *\nDisallow: /private/\n";
const SERVER_PARTY: &str = "web-server";

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks every reference before anything is started.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.users == 0 || self.posts_per_user == 0 {
            return fail("need at least one user and one post per user".into());
        }
        if !self.user_configs.is_empty() && self.user_configs.len() != self.users {
            return fail(format!(
                "{} user configs given for {} users",
                self.user_configs.len(),
                self.users
            ));
        }
        for c in &self.user_configs {
            ConsentConfig::parse(c)?;
        }
        let mut names = BTreeSet::new();
        for c in &self.crawlers {
            if !names.insert(c.name.as_str()) {
                return fail(format!("crawler {} listed twice", c.name));
            }
            if c.allowed_in > self.users {
                return fail(format!(
                    "crawler {} allowed in {} of {} configs",
                    c.name, c.allowed_in, self.users
                ));
            }
            ConsentConfig::new(fishnet_core::Flag::Deny).with_rule(&c.name, fishnet_core::Flag::Allow)?;
        }
        let mut parties = BTreeSet::from([SERVER_PARTY]);
        for p in self.ml_parties.iter().chain(self.crawlers.iter().map(|c| &c.name)) {
            if p.is_empty() || !parties.insert(p.as_str()) {
                return fail(format!("party id {p:?} is empty or not unique"));
            }
        }
        for w in &self.withdrawals {
            if w.user >= self.users || w.post >= self.posts_per_user {
                return fail(format!(
                    "withdrawal names user {} post {}, but only {} users x {} posts exist",
                    w.user, w.post, self.users, self.posts_per_user
                ));
            }
        }
        Ok(())
    }

    pub fn config_for(&self, user: usize) -> ConsentConfig {
        if let Some(c) = self.user_configs.get(user) {
            return ConsentConfig::parse(c).expect("validated");
        }
        self.crawlers
            .iter()
            .fold(ConsentConfig::new(fishnet_core::Flag::Deny), |cfg, c| {
                let flag = if user < c.allowed_in {
                    fishnet_core::Flag::Allow
                } else {
                    fishnet_core::Flag::Deny
                };
                cfg.with_rule(&c.name, flag).expect("validated")
            })
    }

    pub fn post_body(&self, user: usize, post: usize) -> String {
        format!(
            "user {user} post {post}: field notes, entry {}",
            user * self.posts_per_user + post
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlLine {
    pub crawler: String,
    pub requests: usize,
    pub records: usize,
    pub served_tagged: usize,
    pub masked: usize,
    pub disallowed_skipped: usize,
    pub transfers_logged: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestLine {
    pub party: String,
    pub dataset: String,
    pub ingested: usize,
    pub duplicates: usize,
    pub masked_skipped: usize,
    pub quarantined: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JourneyLine {
    pub tag: Digest,
    /// `seq:kind@actor`, in ledger order.
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawalLine {
    pub user: usize,
    pub post: usize,
    pub tag: Digest,
    pub request_seq: u64,
    pub repeat_seq: u64,
    pub completed: bool,
    pub custodians: Vec<String>,
    pub deletions: Vec<String>,
    pub retraining: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub users: usize,
    pub posts: usize,
    pub crawls: Vec<CrawlLine>,
    pub ingests: Vec<IngestLine>,
    pub journeys: Vec<JourneyLine>,
    pub withdrawals: Vec<WithdrawalLine>,
    pub checks: Vec<Check>,
    pub passed: bool,
    /// Wall-clock figures; everything else is reproducible from the spec.
    pub timing: Timing,
}

impl ScenarioReport {
    pub fn without_timing(&self) -> Self {
        ScenarioReport {
            timing: Timing::default(),
            ..self.clone()
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Audit(Vec<Check>);

impl Audit {
    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        let detail = if passed { String::new() } else { detail.into() };
        self.0.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

fn seeded_key(seed: u64, role: &str) -> KeyPair {
    KeyPair::from_seed(format!("{seed}:{role}").as_bytes())
}

fn describe(entry: &TagLedgerEntry) -> Vec<String> {
    entry
        .events
        .iter()
        .map(|e| format!("{}:{}@{}", e.seq, e.kind.as_str(), e.actor))
        .collect()
}

/// Kinds and actors after `after`, in order.
fn actors_of(entry: &TagLedgerEntry, kind: EventKind, after: u64) -> Vec<String> {
    let mut v: Vec<String> = entry
        .events
        .iter()
        .filter(|e| e.kind == kind && e.seq > after)
        .map(|e| e.actor.clone())
        .collect();
    v.sort();
    v
}

/// True if `entry` has crawl, then transfer, then training, in that order.
fn has_chain(entry: &TagLedgerEntry, crawler: &str, ml: &str) -> bool {
    let mut want = [
        (EventKind::Crawl, crawler),
        (EventKind::Transfer, crawler),
        (EventKind::Training, ml),
    ]
    .into_iter();
    let mut next = want.next();
    for e in &entry.events {
        if let Some((kind, actor)) = next {
            if e.kind == kind && e.actor == actor {
                next = want.next();
            }
        }
    }
    next.is_none()
}

/// Runs the scenario under `workdir` (created if needed).
pub async fn run_scenario(spec: &ScenarioSpec, workdir: &Path) -> Result<ScenarioReport> {
    spec.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(workdir).at(workdir)?;
    if std::fs::read_dir(workdir).at(workdir)?.next().is_some() {
        return Err(Error::Config(format!(
            "scenario workdir {} is not empty",
            workdir.display()
        )));
    }
    let mut audit = Audit(Vec::new());

    // Ledger and web server.
    let ledger_service = LedgerService::new(LedgerOptions {
        seed: spec.seed,
        journal: Some(workdir.join("ledger-journal.jsonl")),
        latency: Duration::ZERO,
    })?;
    let ledger_addr = ledger_service.spawn(loopback()).await?;
    let ledger = LedgerClient::new(&format!("http://{ledger_addr}"));
    let server = WebServer::new(ServerConfig {
        port: 0,
        party: SERVER_PARTY.into(),
        ledger: Some(ledger.base().to_string()),
        robots: ROBOTS.into(),
        data_dir: Some(workdir.join("server")),
        cache: false,
        consent: true,
        poll_interval_ms: 0,
        crawlers: Vec::new(),
    })?;
    let server_addr = server.spawn(loopback()).await?;
    let site = format!("http://{server_addr}");

    // Crawler identities on the ledger.
    for c in &spec.crawlers {
        let key = seeded_key(spec.seed, &format!("crawler:{}", c.name));
        ledger
            .register_agent(&CrawlerAgentConfig {
                name: c.name.clone(),
                user_agent_pattern: c.name.clone(),
                ip_ranges: vec!["127.0.0.1/32".parse().expect("static cidr")],
                public_key: key.public_key().clone(),
            })
            .await?;
    }
    server.refresh_registry().await?;

    // Users post through their own tagging proxy.
    let mut keystores = Vec::new();
    let mut bodies: BTreeMap<Digest, (usize, usize)> = BTreeMap::new();
    for user in 0..spec.users {
        let ks = Keystore::open(workdir.join("users").join(format!("u{user}")));
        ks.init(&seeded_key(spec.seed, &format!("user:{user}")), true)?;
        ks.set_config(&spec.config_for(user))?;
        let proxy_addr = proxy::spawn(Keystore::open(ks.dir()), loopback()).await?;
        let client = reqwest::Client::builder()
            .proxy(reqwest::Proxy::http(format!("http://{proxy_addr}"))?)
            .build()?;
        for post in 0..spec.posts_per_user {
            let body = spec.post_body(user, post);
            let resp = client
                .post(format!("{site}/submit"))
                .header(AUTHOR_HEADER, format!("user-{user}"))
                .body(body.clone())
                .send()
                .await?;
            if !resp.status().is_success() {
                let status = resp.status();
                let text = resp.text().await.unwrap_or_default();
                return Err(Error::Config(format!("post rejected with {status}: {text}")));
            }
            bodies.insert(keccak256(body.as_bytes()), (user, post));
        }
        keystores.push(ks);
    }
    server.flush(Duration::from_secs(30)).await?;

    let local: Vec<Vec<LocalConsentRecord>> = keystores
        .iter()
        .map(|ks| ks.list_records(&RecordFilter::default()).map(|(r, _)| r))
        .collect::<Result<_>>()?;
    let local_hashes: BTreeSet<Digest> = local.iter().flatten().map(|r| r.hash).collect();
    audit.check(
        "every post tagged once by the proxy",
        local.iter().all(|r| r.len() == spec.posts_per_user)
            && local_hashes.len() == spec.users * spec.posts_per_user
            && local.iter().flatten().all(LocalConsentRecord::verifies),
        format!(
            "local records per user: {:?}",
            local.iter().map(Vec::len).collect::<Vec<_>>()
        ),
    );
    let stored: BTreeSet<Digest> = server.store().consents().map(|c| c.hash).collect();
    audit.check(
        "server stored every tag as submitted",
        stored == local_hashes,
        format!("{} stored vs {} posted", stored.len(), local_hashes.len()),
    );

    // Regular visitors see every post, plainly.
    let regular: Vec<ApiItem> = direct_client()
        .get(format!("{site}/api/posts"))
        .header(reqwest::header::USER_AGENT, "Mozilla/5.0 (Windows NT 10.0; Win64; x64)")
        .send()
        .await?
        .json()
        .await?;
    audit.check(
        "regular visitor sees all posts without tags",
        regular.len() == bodies.len()
            && regular.iter().all(|i| i.consent_tag_hash.is_none() && !i.masked)
            && regular
                .iter()
                .all(|i| bodies.contains_key(&keccak256(i.content.as_bytes()))),
        format!("{} items", regular.len()),
    );

    // Crawl.
    let dataset_dir = workdir.join("datasets");
    std::fs::create_dir_all(&dataset_dir).at(&dataset_dir)?;
    let mut crawls = Vec::new();
    let mut datasets: BTreeMap<String, PathBuf> = BTreeMap::new();
    let seeds = vec![
        format!("{site}/posts").parse().expect("valid url"),
        format!("{site}/private/drafts").parse().expect("valid url"),
    ];
    for c in &spec.crawlers {
        let identity = CrawlerIdentity::new(&c.name, seeded_key(spec.seed, &format!("crawler:{}", c.name)));
        let settings = CrawlSettings {
            max_pages: 10,
            ..CrawlSettings::default()
        };
        let outcome = crawl_site(&seeds, &identity, &settings).await;
        server.flush(Duration::from_secs(30)).await?;
        let path = dataset_dir.join(format!("{}.jsonl.gz", c.name));
        write_dataset(&outcome.records, &path)?;
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("dataset");
        let transfers = log_transfers(&ledger, &outcome.records, &c.name, file_name).await?;

        let served_tagged = outcome.records.iter().filter(|r| r.consent_tag_hash.is_some()).count();
        let masked = outcome.records.iter().filter(|r| r.masked).count();
        // Expectation from the spec alone.
        let allowed_posts = c.allowed_in.min(spec.users) * spec.posts_per_user;
        let expect_tagged: BTreeSet<Digest> = bodies
            .iter()
            .filter(|(_, (u, _))| *u < c.allowed_in)
            .map(|(h, _)| *h)
            .collect();
        let got_tagged: BTreeSet<Digest> = outcome.records.iter().filter_map(|r| r.consent_tag_hash).collect();
        let explicit_configs = !spec.user_configs.is_empty();
        audit.check(
            &format!("{} sees exactly the posts that allow it", c.name),
            explicit_configs || (got_tagged == expect_tagged && served_tagged == allowed_posts),
            format!("served tagged {served_tagged}, expected {allowed_posts}"),
        );
        audit.check(
            &format!("{} sees every other post masked", c.name),
            served_tagged + masked == bodies.len() && outcome.records.len() == bodies.len(),
            format!("{} records, {masked} masked", outcome.records.len()),
        );
        let private_hits: Vec<_> = server
            .access_log()
            .iter()
            .filter(|a| a.user_agent == identity.user_agent && a.path.starts_with("/private/"))
            .map(|a| a.path.clone())
            .collect();
        audit.check(
            &format!("{} never requests disallowed paths", c.name),
            private_hits.is_empty() && outcome.disallowed.len() == 1,
            format!("requests into /private/: {private_hits:?}"),
        );
        crawls.push(CrawlLine {
            crawler: c.name.clone(),
            requests: outcome.trace.len(),
            records: outcome.records.len(),
            served_tagged,
            masked,
            disallowed_skipped: outcome.disallowed.len(),
            transfers_logged: transfers.len(),
        });
        datasets.insert(c.name.clone(), path);
    }

    // Tag preservation through crawl.
    let mut all_records: Vec<(String, DatasetRecord)> = Vec::new();
    for (name, path) in &datasets {
        all_records.extend(read_dataset(path)?.into_iter().map(|r| (name.clone(), r)));
    }
    let preserved = all_records
        .iter()
        .all(|(_, r)| match (&r.consent_tag_hash, &r.consent_tag_sig) {
            (Some(h), Some(s)) => {
                *h == keccak256(r.content.as_bytes()) && local.iter().flatten().any(|l| l.hash == *h && l.sig == *s)
            }
            (None, None) => true,
            _ => false,
        });
    audit.check(
        "dataset tags equal submitted tags and hash their content",
        preserved,
        "a dataset record's tag differs from what its author submitted",
    );

    // Ingest.
    let mut ml_parties = Vec::new();
    let mut ingests = Vec::new();
    for party in &spec.ml_parties {
        let mut ml = MlParty::open(party, workdir.join("ml").join(party))?;
        for (name, path) in &datasets {
            let s = ml.ingest_dataset(path, Some(&ledger)).await?;
            ingests.push(IngestLine {
                party: party.clone(),
                dataset: name.clone(),
                ingested: s.ingested,
                duplicates: s.duplicates,
                masked_skipped: s.masked_skipped,
                quarantined: s.quarantined.len(),
            });
        }
        let intact = ml.stores().consents.records.keys().all(|h| {
            ml.stores()
                .training
                .items
                .iter()
                .any(|i| i.tag_hash == Some(*h) && keccak256(i.content.as_bytes()) == *h)
        });
        audit.check(
            &format!("{party} consent records match training content"),
            intact,
            "hash mismatch in ML stores",
        );
        ml_parties.push(ml);
    }
    let mut custodians_parties: Vec<MlParty> = Vec::new();
    for c in &spec.crawlers {
        let dataset = datasets[&c.name].clone();
        custodians_parties
            .push(MlParty::open(&c.name, workdir.join("custody").join(&c.name))?.with_datasets(vec![dataset]));
    }

    // Journeys.
    let mut journeys = Vec::new();
    let mut custody_ok = true;
    let mut custody_detail = String::new();
    for hash in &local_hashes {
        let Some(entry) = ledger.query_tag(hash).await? else {
            audit.check("every tag is on the ledger", false, format!("{hash} missing"));
            continue;
        };
        let mut holders = BTreeSet::new();
        if server.store().holds_hash(hash) {
            holders.insert(SERVER_PARTY.to_string());
        }
        for p in custodians_parties.iter().chain(ml_parties.iter()) {
            if p.references(hash)? {
                holders.insert(p.party().to_string());
            }
        }
        if holders != entry.custodians {
            custody_ok = false;
            custody_detail = format!("{hash}: ledger {:?}, holders {holders:?}", entry.custodians);
        }
        journeys.push(JourneyLine {
            tag: *hash,
            events: describe(&entry),
        });
    }
    audit.check("ledger custodians equal actual holders", custody_ok, custody_detail);
    for c in &spec.crawlers {
        let tags: BTreeSet<Digest> = all_records
            .iter()
            .filter(|(n, _)| *n == c.name)
            .filter_map(|(_, r)| r.consent_tag_hash)
            .collect();
        for ml in &spec.ml_parties {
            let mut missing = Vec::new();
            for h in &tags {
                let entry = ledger.query_tag(h).await?;
                if !entry.is_some_and(|e| has_chain(&e, &c.name, ml)) {
                    missing.push(h.to_hex());
                }
            }
            audit.check(
                &format!("crawl, transfer, training chain for {} tags via {ml}", c.name),
                missing.is_empty(),
                format!("incomplete: {missing:?}"),
            );
        }
    }

    // Withdrawals.
    let mut withdrawals = Vec::new();
    for w in &spec.withdrawals {
        let ks = &keystores[w.user];
        let hash = keccak256(spec.post_body(w.user, w.post).as_bytes());
        let record = ks.find(&hash)?;
        let key = ks.key()?;
        let receipt = ledger.request_withdrawal(&record, &key).await?;
        let repeat = ledger.request_withdrawal(&record, &key).await?;
        audit.check(
            "repeated withdrawal returns the original receipt",
            repeat.duplicate && repeat.seq == receipt.seq && !receipt.duplicate,
            format!("first {receipt:?}, repeat {repeat:?}"),
        );
        withdrawals.push((w.clone(), hash, receipt.seq, repeat.seq));
    }

    // Let every custodian react, in a fixed order, until nothing is pending.
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        server.process_withdrawals().await?;
        for p in custodians_parties.iter_mut().chain(ml_parties.iter_mut()) {
            p.poll_once(&ledger).await?;
        }
        let mut open = false;
        for (_, hash, _, _) in &withdrawals {
            let entry = ledger.query_tag(hash).await?;
            open |= !matches!(entry.map(|e| e.withdrawal), Some(WithdrawalState::Completed { .. }));
        }
        if !open {
            break;
        }
        if Instant::now() > deadline {
            return Err(Error::Timeout("withdrawals to complete".into()));
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }

    let mut withdrawal_lines = Vec::new();
    for (w, hash, request_seq, repeat_seq) in withdrawals {
        let entry = ledger
            .query_tag(&hash)
            .await?
            .ok_or_else(|| Error::UnknownTag(hash.to_hex()))?;
        let deletions = actors_of(&entry, EventKind::DeletionCompleted, request_seq);
        let retraining = actors_of(&entry, EventKind::RetrainingCompleted, request_seq);
        let custodians: Vec<String> = entry.custodians.iter().cloned().collect();
        let completed = matches!(entry.withdrawal, WithdrawalState::Completed { .. });
        audit.check(
            "deletion completed by every custodian",
            completed && deletions == custodians,
            format!("custodians {custodians:?}, deletions {deletions:?}"),
        );
        let trainers: Vec<String> = spec
            .ml_parties
            .iter()
            .filter(|p| entry.custodians.contains(*p))
            .cloned()
            .collect();
        audit.check(
            "retraining completed by every ML custodian",
            retraining == trainers,
            format!("ML custodians {trainers:?}, retraining {retraining:?}"),
        );
        let mut leftovers = Vec::new();
        if server.store().holds_hash(&hash) {
            leftovers.push(SERVER_PARTY.to_string());
        }
        for (name, path) in &datasets {
            if read_dataset(path)?
                .iter()
                .any(|r| r.consent_tag_hash == Some(hash) || keccak256(r.content.as_bytes()) == hash)
            {
                leftovers.push(format!("dataset {name}"));
            }
        }
        for ml in &ml_parties {
            let s = ml.stores();
            if s.consents.records.contains_key(&hash)
                || s.training
                    .items
                    .iter()
                    .any(|i| i.tag_hash == Some(hash) || keccak256(i.content.as_bytes()) == hash)
            {
                leftovers.push(ml.party().to_string());
            }
        }
        audit.check(
            "withdrawn data absent everywhere",
            leftovers.is_empty(),
            format!("still referenced by {leftovers:?}"),
        );
        let served_after: Vec<ApiItem> = direct_client()
            .get(format!("{site}/api/posts"))
            .send()
            .await?
            .json()
            .await?;
        audit.check(
            "withdrawn post no longer served",
            served_after.iter().all(|i| keccak256(i.content.as_bytes()) != hash),
            "still served",
        );
        withdrawal_lines.push(WithdrawalLine {
            user: w.user,
            post: w.post,
            tag: hash,
            request_seq,
            repeat_seq,
            completed,
            custodians,
            deletions,
            retraining,
        });
    }

    let journeys = {
        let mut final_lines = Vec::new();
        for j in journeys {
            let entry = ledger.query_tag(&j.tag).await?;
            final_lines.push(JourneyLine {
                tag: j.tag,
                events: entry.as_ref().map(describe).unwrap_or_default(),
            });
        }
        final_lines
    };
    audit.check(
        "ledger withdrawals are all backed by verified requests",
        ledger_service.snapshot().withdrawals_are_backed(),
        "unbacked withdrawal state",
    );

    let passed = audit.0.iter().all(|c| c.passed);
    Ok(ScenarioReport {
        users: spec.users,
        posts: bodies.len(),
        crawls,
        ingests,
        journeys,
        withdrawals: withdrawal_lines,
        checks: audit.0,
        passed,
        timing: Timing {
            elapsed_ms: started.elapsed().as_millis() as u64,
        },
    })
}
