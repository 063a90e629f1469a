//! Deterministic single-writer simulation of the consent ledger.
//!
//! Three roles share one sequence counter: the consent logger (tag entries
//! and their journey events), the agent registry (crawler identities), and
//! the withdrawal handler (challenge-response ownership proofs). Every
//! mutation goes through [`Ledger::apply`] so a recorded call list replays
//! to identical state.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::agent::CrawlerAgentConfig;
use crate::crypto::{keccak256, verify_digest, Digest, NonceSource, PublicKey, SignatureBytes};
use crate::error::LedgerError;

/// Most consent entries one transaction may carry.
pub const TX_CAPACITY: usize = 47_000;

/// Challenges expire this many sequence numbers after issuance.
pub const CHALLENGE_TTL: u64 = 1_000;

/// Actor recorded on withdrawal requests; the owner stays anonymous.
pub const OWNER_ACTOR: &str = "owner";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Crawl,
    Transfer,
    Training,
    WithdrawalRequested,
    DeletionCompleted,
    RetrainingCompleted,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Crawl => "crawl",
            EventKind::Transfer => "transfer",
            EventKind::Training => "training",
            EventKind::WithdrawalRequested => "withdrawal-requested",
            EventKind::DeletionCompleted => "deletion-completed",
            EventKind::RetrainingCompleted => "retraining-completed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub actor: String,
    pub tag: Digest,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum WithdrawalState {
    None,
    Requested {
        request_seq: u64,
        /// Custodians at request time that have not yet reported deletion.
        awaiting: BTreeSet<String>,
    },
    Completed {
        request_seq: u64,
        completed_seq: u64,
    },
}

impl WithdrawalState {
    pub fn request_seq(&self) -> Option<u64> {
        match self {
            WithdrawalState::None => None,
            WithdrawalState::Requested { request_seq, .. } | WithdrawalState::Completed { request_seq, .. } => {
                Some(*request_seq)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagLedgerEntry {
    pub hash: Digest,
    /// Unknown when the entry was created lazily by a crawl event.
    pub signature: Option<SignatureBytes>,
    pub custodians: BTreeSet<String>,
    pub events: Vec<LedgerEvent>,
    pub withdrawal: WithdrawalState,
}

impl TagLedgerEntry {
    fn new(hash: Digest) -> Self {
        TagLedgerEntry {
            hash,
            signature: None,
            custodians: BTreeSet::new(),
            events: Vec::new(),
            withdrawal: WithdrawalState::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagBatchEntry {
    pub hash: Digest,
    pub sig: SignatureBytes,
    pub custodian: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTransaction {
    pub tx_id: u64,
    pub entries: Vec<TagBatchEntry>,
    pub first_seq: u64,
    pub last_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxReceipt {
    pub tx_id: u64,
    pub entry_count: usize,
    pub first_seq: u64,
    pub last_seq: u64,
}

mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = alloc::string::String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub id: String,
    #[serde(with = "hex32")]
    pub nonce: [u8; 32],
    pub expiry: u64,
    pub consumed: bool,
}

impl Challenge {
    /// The digest an owner signs to answer this challenge.
    pub fn digest(&self) -> Digest {
        keccak256(&self.nonce)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawalRequest {
    pub tag_hash: Digest,
    pub tag_signature: SignatureBytes,
    pub public_key: PublicKey,
    pub challenge_id: String,
    pub challenge_signature: SignatureBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BadTagSignature,
    BadChallengeSignature,
    ChallengeExpiredOrConsumed,
    UnknownTag,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::BadTagSignature => "bad-tag-signature",
            RejectReason::BadChallengeSignature => "bad-challenge-signature",
            RejectReason::ChallengeExpiredOrConsumed => "challenge-expired-or-consumed",
            RejectReason::UnknownTag => "unknown-tag",
        }
    }
}

impl core::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum WithdrawalOutcome {
    Accepted {
        seq: u64,
        /// True when the tag already had a withdrawal; `seq` is the original.
        duplicate: bool,
    },
    Rejected {
        reason: RejectReason,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionAction {
    Deletion,
    Retraining,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventBatch {
    pub events: Vec<LedgerEvent>,
    pub high_water: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRegistry {
    pub version: u64,
    pub agents: Vec<CrawlerAgentConfig>,
}

/// A recorded mutating call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "call", rename_all = "kebab-case")]
pub enum LedgerCall {
    RegisterAgent {
        config: CrawlerAgentConfig,
    },
    SubmitTagBatch {
        entries: Vec<TagBatchEntry>,
    },
    AppendEvent {
        tag: Digest,
        kind: EventKind,
        actor: String,
        detail: String,
    },
    IssueChallenge,
    SubmitWithdrawal {
        request: WithdrawalRequest,
    },
    ReportCompletion {
        tag: Digest,
        custodian: String,
        action: CompletionAction,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "kebab-case")]
pub enum LedgerReply {
    Version { version: u64 },
    Receipt { receipt: TxReceipt },
    Seq { seq: u64 },
    Challenge { challenge: Challenge },
    Withdrawal { outcome: WithdrawalOutcome },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoredWithdrawal {
    request: WithdrawalRequest,
    seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ledger {
    seq: u64,
    tags: BTreeMap<Digest, TagLedgerEntry>,
    log: Vec<LedgerEvent>,
    transactions: Vec<LedgerTransaction>,
    agents: BTreeMap<String, CrawlerAgentConfig>,
    registry_version: u64,
    challenges: BTreeMap<String, Challenge>,
    challenge_counter: u64,
    withdrawals: BTreeMap<Digest, StoredWithdrawal>,
    nonces: NonceSource,
}

impl Ledger {
    pub fn new(seed: u64) -> Self {
        Ledger {
            seq: 0,
            tags: BTreeMap::new(),
            log: Vec::new(),
            transactions: Vec::new(),
            agents: BTreeMap::new(),
            registry_version: 0,
            challenges: BTreeMap::new(),
            challenge_counter: 0,
            withdrawals: BTreeMap::new(),
            nonces: NonceSource::from_seed(seed),
        }
    }

    /// Latest assigned sequence number.
    pub fn current_seq(&self) -> u64 {
        self.seq
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.log
    }

    pub fn transactions(&self) -> &[LedgerTransaction] {
        &self.transactions
    }

    pub fn tags(&self) -> impl Iterator<Item = &TagLedgerEntry> {
        self.tags.values()
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn push_event(&mut self, tag: Digest, kind: EventKind, actor: &str, detail: &str) -> u64 {
        let seq = self.next_seq();
        let event = LedgerEvent {
            seq,
            kind,
            actor: actor.to_string(),
            tag,
            detail: detail.to_string(),
        };
        self.log.push(event.clone());
        self.tags
            .entry(tag)
            .or_insert_with(|| TagLedgerEntry::new(tag))
            .events
            .push(event);
        seq
    }

    /// Dispatches a recorded call.
    pub fn apply(&mut self, call: LedgerCall) -> LedgerReply {
        fn err(e: LedgerError) -> LedgerReply {
            LedgerReply::Error { message: e.to_string() }
        }
        match call {
            LedgerCall::RegisterAgent { config } => match self.register_agent(config) {
                Ok(version) => LedgerReply::Version { version },
                Err(e) => err(e),
            },
            LedgerCall::SubmitTagBatch { entries } => match self.submit_tag_batch(entries) {
                Ok(receipt) => LedgerReply::Receipt { receipt },
                Err(e) => err(e),
            },
            LedgerCall::AppendEvent {
                tag,
                kind,
                actor,
                detail,
            } => match self.append_event(tag, kind, &actor, &detail) {
                Ok(seq) => LedgerReply::Seq { seq },
                Err(e) => err(e),
            },
            LedgerCall::IssueChallenge => LedgerReply::Challenge {
                challenge: self.issue_challenge(),
            },
            LedgerCall::SubmitWithdrawal { request } => LedgerReply::Withdrawal {
                outcome: self.submit_withdrawal(request),
            },
            LedgerCall::ReportCompletion { tag, custodian, action } => {
                match self.report_completion(tag, &custodian, action) {
                    Ok(seq) => LedgerReply::Seq { seq },
                    Err(e) => err(e),
                }
            }
        }
    }

    /// Adds or replaces a crawler configuration; returns the new registry version.
    pub fn register_agent(&mut self, config: CrawlerAgentConfig) -> Result<u64, LedgerError> {
        config.validate()?;
        self.agents.insert(config.name.clone(), config);
        self.registry_version += 1;
        Ok(self.registry_version)
    }

    pub fn agent_registry(&self) -> AgentRegistry {
        AgentRegistry {
            version: self.registry_version,
            agents: self.agents.values().cloned().collect(),
        }
    }

    /// Records a bulk upload of tags; the submitting party becomes custodian.
    pub fn submit_tag_batch(&mut self, entries: Vec<TagBatchEntry>) -> Result<TxReceipt, LedgerError> {
        if entries.is_empty() {
            return Err(LedgerError::EmptyBatch);
        }
        if entries.len() > TX_CAPACITY {
            return Err(LedgerError::CapacityExceeded {
                count: entries.len(),
                limit: TX_CAPACITY,
            });
        }
        let first_seq = self.seq + 1;
        for e in &entries {
            self.seq += 1;
            let entry = self.tags.entry(e.hash).or_insert_with(|| TagLedgerEntry::new(e.hash));
            if entry.signature.is_none() {
                entry.signature = Some(e.sig.clone());
            }
            entry.custodians.insert(e.custodian.clone());
        }
        let tx_id = self.transactions.len() as u64 + 1;
        let receipt = TxReceipt {
            tx_id,
            entry_count: entries.len(),
            first_seq,
            last_seq: self.seq,
        };
        self.transactions.push(LedgerTransaction {
            tx_id,
            entries,
            first_seq,
            last_seq: self.seq,
        });
        Ok(receipt)
    }

    /// Logs a crawl, transfer or training event. Crawl events may create the
    /// entry; the others need an existing tag. Transfer and training actors
    /// become custodians.
    pub fn append_event(
        &mut self,
        tag: Digest,
        kind: EventKind,
        actor: &str,
        detail: &str,
    ) -> Result<u64, LedgerError> {
        match kind {
            EventKind::Crawl => {}
            EventKind::Transfer | EventKind::Training => {
                if !self.tags.contains_key(&tag) {
                    return Err(LedgerError::UnknownTag(tag.to_hex()));
                }
            }
            other => return Err(LedgerError::ReservedKind(other.as_str())),
        }
        let seq = self.push_event(tag, kind, actor, detail);
        if matches!(kind, EventKind::Transfer | EventKind::Training) {
            if let Some(e) = self.tags.get_mut(&tag) {
                e.custodians.insert(actor.to_string());
            }
        }
        Ok(seq)
    }

    pub fn issue_challenge(&mut self) -> Challenge {
        self.challenge_counter += 1;
        let challenge = Challenge {
            id: format!("ch-{}", self.challenge_counter),
            nonce: self.nonces.next_nonce(),
            expiry: self.seq + CHALLENGE_TTL,
            consumed: false,
        };
        self.challenges.insert(challenge.id.clone(), challenge.clone());
        challenge
    }

    pub fn challenge(&self, id: &str) -> Option<&Challenge> {
        self.challenges.get(id)
    }

    /// Verifies ownership and opens (or re-acknowledges) a withdrawal.
    ///
    /// Checks run in a fixed order, each with its own rejection reason: the
    /// tag exists; the presented tag signature is the one on record and
    /// verifies under the key; the challenge is live; the challenge answer
    /// verifies under the same key.
    pub fn submit_withdrawal(&mut self, request: WithdrawalRequest) -> WithdrawalOutcome {
        let reject = |reason| WithdrawalOutcome::Rejected { reason };
        let Some(entry) = self.tags.get(&request.tag_hash) else {
            return reject(RejectReason::UnknownTag);
        };
        let on_record = entry.signature.as_ref() == Some(&request.tag_signature);
        if !on_record || !verify_digest(&request.public_key, &request.tag_hash, request.tag_signature.as_slice()) {
            return reject(RejectReason::BadTagSignature);
        }
        // The accepting transaction is the next one on the ledger.
        let landing = self.seq + 1;
        let Some(challenge) = self
            .challenges
            .get(&request.challenge_id)
            .filter(|c| !c.consumed && landing <= c.expiry)
        else {
            return reject(RejectReason::ChallengeExpiredOrConsumed);
        };
        if !verify_digest(
            &request.public_key,
            &challenge.digest(),
            request.challenge_signature.as_slice(),
        ) {
            return reject(RejectReason::BadChallengeSignature);
        }
        if let Some(c) = self.challenges.get_mut(&request.challenge_id) {
            c.consumed = true;
        }

        if let Some(original) = entry.withdrawal.request_seq() {
            return WithdrawalOutcome::Accepted {
                seq: original,
                duplicate: true,
            };
        }
        let tag = request.tag_hash;
        let custodians = entry.custodians.clone();
        let seq = self.push_event(tag, EventKind::WithdrawalRequested, OWNER_ACTOR, &request.challenge_id);
        let entry = self.tags.get_mut(&tag).expect("entry checked above");
        entry.withdrawal = if custodians.is_empty() {
            WithdrawalState::Completed {
                request_seq: seq,
                completed_seq: seq,
            }
        } else {
            WithdrawalState::Requested {
                request_seq: seq,
                awaiting: custodians,
            }
        };
        self.withdrawals.insert(tag, StoredWithdrawal { request, seq });
        WithdrawalOutcome::Accepted { seq, duplicate: false }
    }

    /// A custodian reports it has deleted (or retrained without) the data.
    /// Repeated reports return the original sequence number.
    pub fn report_completion(
        &mut self,
        tag: Digest,
        custodian: &str,
        action: CompletionAction,
    ) -> Result<u64, LedgerError> {
        let entry = self
            .tags
            .get(&tag)
            .ok_or_else(|| LedgerError::UnknownTag(tag.to_hex()))?;
        let Some(request_seq) = entry.withdrawal.request_seq() else {
            return Err(LedgerError::NoActiveWithdrawal(tag.to_hex()));
        };
        if !entry.custodians.contains(custodian) {
            return Err(LedgerError::NotCustodian {
                party: custodian.to_string(),
                tag: tag.to_hex(),
            });
        }
        let kind = match action {
            CompletionAction::Deletion => EventKind::DeletionCompleted,
            CompletionAction::Retraining => EventKind::RetrainingCompleted,
        };
        if let Some(prior) = entry
            .events
            .iter()
            .find(|e| e.seq > request_seq && e.kind == kind && e.actor == custodian)
        {
            return Ok(prior.seq);
        }
        let seq = self.push_event(tag, kind, custodian, "");
        if action == CompletionAction::Deletion {
            let entry = self.tags.get_mut(&tag).expect("entry checked above");
            if let WithdrawalState::Requested { request_seq, awaiting } = &mut entry.withdrawal {
                awaiting.remove(custodian);
                if awaiting.is_empty() {
                    entry.withdrawal = WithdrawalState::Completed {
                        request_seq: *request_seq,
                        completed_seq: seq,
                    };
                }
            }
        }
        Ok(seq)
    }

    pub fn query_tag(&self, hash: &Digest) -> Option<TagLedgerEntry> {
        self.tags.get(hash).cloned()
    }

    /// Events after `since` that match `filter`. A party filter matches events
    /// the party emitted or that concern a tag it holds. Polling again from
    /// the returned high-water mark never repeats an event.
    pub fn poll_events(&self, since: u64, filter: &EventFilter) -> EventBatch {
        let start = self.log.partition_point(|e| e.seq <= since);
        let events = self.log[start..]
            .iter()
            .filter(|e| filter.tag.map_or(true, |t| e.tag == t))
            .filter(|e| {
                filter.party.as_deref().map_or(true, |p| {
                    e.actor == p || self.tags.get(&e.tag).is_some_and(|t| t.custodians.contains(p))
                })
            })
            .cloned()
            .collect();
        EventBatch {
            events,
            high_water: self.seq.max(since),
        }
    }

    /// True iff a stored, verified request backs every non-`None` withdrawal.
    pub fn withdrawals_are_backed(&self) -> bool {
        self.tags.values().all(|t| match t.withdrawal.request_seq() {
            None => true,
            Some(seq) => self.withdrawals.get(&t.hash).is_some_and(|w| {
                w.seq == seq
                    && t.signature.as_ref() == Some(&w.request.tag_signature)
                    && verify_digest(
                        &w.request.public_key,
                        &w.request.tag_hash,
                        w.request.tag_signature.as_slice(),
                    )
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use alloc::vec;

    fn tag_for(key: &KeyPair, content: &str) -> (Digest, SignatureBytes) {
        let h = keccak256(content.as_bytes());
        (h, key.sign(&h))
    }

    fn batch(entries: &[(Digest, SignatureBytes, &str)]) -> Vec<TagBatchEntry> {
        entries
            .iter()
            .map(|(h, s, c)| TagBatchEntry {
                hash: *h,
                sig: s.clone(),
                custodian: (*c).into(),
            })
            .collect()
    }

    fn withdraw(l: &mut Ledger, key: &KeyPair, h: Digest, s: &SignatureBytes) -> WithdrawalOutcome {
        let ch = l.issue_challenge();
        l.submit_withdrawal(WithdrawalRequest {
            tag_hash: h,
            tag_signature: s.clone(),
            public_key: key.public_key().clone(),
            challenge_id: ch.id.clone(),
            challenge_signature: key.sign(&ch.digest()),
        })
    }

    fn agent(name: &str, ranges: &[&str]) -> CrawlerAgentConfig {
        CrawlerAgentConfig {
            name: name.into(),
            user_agent_pattern: name.into(),
            ip_ranges: ranges.iter().map(|r| r.parse().unwrap()).collect(),
            public_key: KeyPair::from_seed(name.as_bytes()).public_key().clone(),
        }
    }

    #[test]
    fn agent_registry_versions() {
        let mut l = Ledger::new(1);
        assert_eq!(
            l.register_agent(agent("GPTBot", &["20.15.240.0/20", "40.84.180.0/22"])),
            Ok(1)
        );
        assert_eq!(l.agent_registry().agents.len(), 1);
        assert_eq!(l.register_agent(agent("GPTBot", &["52.230.152.0/24"])), Ok(2));
        let reg = l.agent_registry();
        assert_eq!(reg.version, 2);
        assert_eq!(reg.agents[0].ip_ranges.len(), 1);
        assert_eq!(reg.agents[0].ip_ranges[0].to_string(), "52.230.152.0/24");
        let mut empty = agent("X", &["1.0.0.0/8"]);
        empty.ip_ranges.clear();
        assert!(l.register_agent(empty).is_err());
    }

    #[test]
    fn batch_limits_and_custodian_sets() {
        let mut l = Ledger::new(1);
        let k = KeyPair::from_seed(b"u");
        let (h, s) = tag_for(&k, "a");
        assert_eq!(l.submit_tag_batch(vec![]), Err(LedgerError::EmptyBatch));
        let r = l
            .submit_tag_batch(batch(&[(h, s.clone(), "server-a"), (h, s.clone(), "server-b")]))
            .unwrap();
        assert_eq!((r.first_seq, r.last_seq, r.entry_count), (1, 2, 2));
        let e = l.query_tag(&h).unwrap();
        assert_eq!(e.custodians.len(), 2);
        assert!(e.events.is_empty());
    }

    #[test]
    fn append_event_rules() {
        let mut l = Ledger::new(1);
        let k = KeyPair::from_seed(b"u");
        let (h, s) = tag_for(&k, "a");
        assert!(matches!(
            l.append_event(h, EventKind::Transfer, "x", ""),
            Err(LedgerError::UnknownTag(_))
        ));
        // crawl may race the batch upload
        let seq = l.append_event(h, EventKind::Crawl, "GPTBot", "/posts").unwrap();
        assert_eq!(seq, 1);
        l.submit_tag_batch(batch(&[(h, s, "web")])).unwrap();
        l.append_event(h, EventKind::Training, "ml-corp", "").unwrap();
        let e = l.query_tag(&h).unwrap();
        assert!(e.custodians.contains("ml-corp"));
        assert!(!e.custodians.contains("GPTBot"));
        assert_eq!(
            e.events.iter().map(|e| e.kind).collect::<Vec<_>>(),
            vec![EventKind::Crawl, EventKind::Training]
        );
        assert!(l.append_event(h, EventKind::DeletionCompleted, "web", "").is_err());
    }

    #[test]
    fn withdrawal_flow_and_completion() {
        let mut l = Ledger::new(9);
        let k = KeyPair::from_seed(b"owner");
        let (h, s) = tag_for(&k, "post");
        l.submit_tag_batch(batch(&[(h, s.clone(), "web")])).unwrap();
        l.append_event(h, EventKind::Training, "ml", "").unwrap();

        let out = withdraw(&mut l, &k, h, &s);
        let WithdrawalOutcome::Accepted { seq, duplicate: false } = out else {
            panic!("expected acceptance, got {out:?}");
        };
        assert!(l.withdrawals_are_backed());
        let polled = l.poll_events(
            0,
            &EventFilter {
                party: Some("ml".into()),
                tag: None,
            },
        );
        assert!(polled.events.iter().any(|e| e.kind == EventKind::WithdrawalRequested));

        // idempotent second request
        assert_eq!(
            withdraw(&mut l, &k, h, &s),
            WithdrawalOutcome::Accepted { seq, duplicate: true }
        );
        assert_eq!(
            l.events()
                .iter()
                .filter(|e| e.kind == EventKind::WithdrawalRequested)
                .count(),
            1
        );

        assert!(matches!(
            l.report_completion(h, "stranger", CompletionAction::Deletion),
            Err(LedgerError::NotCustodian { .. })
        ));
        l.report_completion(h, "web", CompletionAction::Deletion).unwrap();
        assert!(matches!(
            l.query_tag(&h).unwrap().withdrawal,
            WithdrawalState::Requested { .. }
        ));
        let r1 = l.report_completion(h, "ml", CompletionAction::Retraining).unwrap();
        let d1 = l.report_completion(h, "ml", CompletionAction::Deletion).unwrap();
        assert!(
            matches!(l.query_tag(&h).unwrap().withdrawal, WithdrawalState::Completed { completed_seq, .. } if completed_seq == d1)
        );
        assert_eq!(l.report_completion(h, "ml", CompletionAction::Deletion), Ok(d1));
        assert_eq!(l.report_completion(h, "ml", CompletionAction::Retraining), Ok(r1));
    }

    #[test]
    fn completion_without_withdrawal_fails() {
        let mut l = Ledger::new(1);
        let k = KeyPair::from_seed(b"o");
        let (h, s) = tag_for(&k, "p");
        l.submit_tag_batch(batch(&[(h, s, "web")])).unwrap();
        assert!(matches!(
            l.report_completion(h, "web", CompletionAction::Deletion),
            Err(LedgerError::NoActiveWithdrawal(_))
        ));
    }

    #[test]
    fn rejection_reasons() {
        let mut l = Ledger::new(3);
        let k = KeyPair::from_seed(b"owner");
        let thief = KeyPair::from_seed(b"thief");
        let (h, s) = tag_for(&k, "post");
        let (h2, s2) = tag_for(&k, "post2");
        l.submit_tag_batch(batch(&[(h, s.clone(), "web"), (h2, s2.clone(), "web")]))
            .unwrap();

        // thief signs the tag hash with their own key
        let forged = thief.sign(&h);
        assert_eq!(
            withdraw(&mut l, &thief, h, &forged),
            WithdrawalOutcome::Rejected {
                reason: RejectReason::BadTagSignature
            }
        );
        assert_eq!(
            withdraw(&mut l, &thief, h, &s),
            WithdrawalOutcome::Rejected {
                reason: RejectReason::BadTagSignature
            }
        );

        // owner key but the challenge answer signs the wrong digest
        let ch = l.issue_challenge();
        let out = l.submit_withdrawal(WithdrawalRequest {
            tag_hash: h,
            tag_signature: s.clone(),
            public_key: k.public_key().clone(),
            challenge_id: ch.id.clone(),
            challenge_signature: k.sign(&keccak256(b"something else")),
        });
        assert_eq!(
            out,
            WithdrawalOutcome::Rejected {
                reason: RejectReason::BadChallengeSignature
            }
        );

        // reuse a consumed challenge
        let ch = l.issue_challenge();
        let req = |hash, sig: &SignatureBytes| WithdrawalRequest {
            tag_hash: hash,
            tag_signature: sig.clone(),
            public_key: k.public_key().clone(),
            challenge_id: ch.id.clone(),
            challenge_signature: k.sign(&ch.digest()),
        };
        assert!(matches!(
            l.submit_withdrawal(req(h, &s)),
            WithdrawalOutcome::Accepted { .. }
        ));
        assert_eq!(
            l.submit_withdrawal(req(h2, &s2)),
            WithdrawalOutcome::Rejected {
                reason: RejectReason::ChallengeExpiredOrConsumed
            }
        );

        let unknown = keccak256(b"never posted");
        assert_eq!(
            withdraw(&mut l, &k, unknown, &k.sign(&unknown)),
            WithdrawalOutcome::Rejected {
                reason: RejectReason::UnknownTag
            }
        );
        assert!(l.withdrawals_are_backed());
    }

    #[test]
    fn challenges_expire() {
        let mut l = Ledger::new(3);
        let k = KeyPair::from_seed(b"owner");
        let (h, s) = tag_for(&k, "post");
        l.submit_tag_batch(batch(&[(h, s.clone(), "web")])).unwrap();
        let ch = l.issue_challenge();
        assert_eq!(ch.expiry, 1 + CHALLENGE_TTL);
        assert!(!l.challenge(&ch.id).unwrap().consumed);
        for _ in 0..CHALLENGE_TTL - 1 {
            l.append_event(h, EventKind::Crawl, "bot", "").unwrap();
        }
        let mut late = l.clone();
        late.append_event(h, EventKind::Crawl, "bot", "").unwrap();
        let req = WithdrawalRequest {
            tag_hash: h,
            tag_signature: s.clone(),
            public_key: k.public_key().clone(),
            challenge_id: ch.id.clone(),
            challenge_signature: k.sign(&ch.digest()),
        };
        assert_eq!(
            l.submit_withdrawal(req.clone()),
            WithdrawalOutcome::Accepted {
                seq: ch.expiry,
                duplicate: false
            }
        );
        let out = late.submit_withdrawal(req);
        assert_eq!(
            out,
            WithdrawalOutcome::Rejected {
                reason: RejectReason::ChallengeExpiredOrConsumed
            }
        );
    }

    #[test]
    fn challenges_are_seeded_and_distinct() {
        let mut a = Ledger::new(5);
        let mut b = Ledger::new(5);
        let (a1, a2) = (a.issue_challenge(), a.issue_challenge());
        assert_ne!(a1.nonce, a2.nonce);
        assert_ne!(a1.id, a2.id);
        assert_eq!(b.issue_challenge(), a1);
    }

    #[test]
    fn polling_is_exactly_once() {
        let mut l = Ledger::new(1);
        for i in 0..5u8 {
            l.append_event(keccak256(&[i]), EventKind::Crawl, "bot", "").unwrap();
        }
        let all = l.poll_events(0, &EventFilter::default());
        assert_eq!(all.events.len(), 5);
        assert!(l.poll_events(all.high_water, &EventFilter::default()).events.is_empty());
        let part = l.poll_events(3, &EventFilter::default());
        assert_eq!(part.events.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![4, 5]);
    }
}
