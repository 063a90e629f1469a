//! Client-side tagging of outgoing requests and the records kept for
//! tracking and withdrawal.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::consent::{wire, ConsentConfig};
use crate::crypto::{keccak256, Digest, KeyPair, PublicKey, SignatureBytes};
use crate::ledger::{Challenge, LedgerEvent, TagLedgerEntry, WithdrawalRequest};
use crate::request::HttpRequest;

/// What the agent remembers about each tagged request. Serialized field
/// names are the local store's line format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalConsentRecord {
    pub hash: Digest,
    pub sig: SignatureBytes,
    pub pubkey: PublicKey,
    pub consent_config: ConsentConfig,
    pub url: String,
    pub method: String,
    pub ts: u64,
}

impl LocalConsentRecord {
    pub fn verifies(&self) -> bool {
        crate::crypto::verify_digest(&self.pubkey, &self.hash, self.sig.as_slice())
    }
}

/// Tags `request` if it carries data: POST, PUT or PATCH with a non-empty
/// body and no non-crawlable marker. Adds the three consent headers and
/// returns the record to keep. Otherwise returns the request untouched.
pub fn tag_outgoing_request(
    mut request: HttpRequest,
    key: &KeyPair,
    config: &ConsentConfig,
    now: u64,
) -> (HttpRequest, Option<LocalConsentRecord>) {
    if !request.carries_data() || request.body.is_empty() || request.headers.get(wire::NON_CRAWLABLE) == Some("1") {
        return (request, None);
    }
    let hash = keccak256(&request.body);
    let sig = key.sign(&hash);
    request.headers.insert(wire::CONSENT_TAG_HASH, hash.to_hex());
    request.headers.insert(wire::CONSENT_TAG_SIG, sig.to_hex());
    request.headers.insert(wire::CONSENT_CONFIG, config.serialize());
    let record = LocalConsentRecord {
        hash,
        sig,
        pubkey: key.public_key().clone(),
        consent_config: config.clone(),
        url: request.url.clone(),
        method: request.method.clone(),
        ts: now,
    };
    (request, Some(record))
}

/// The ledger-recorded journey of one tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JourneyReport {
    pub tag_hash: Digest,
    pub events: Vec<LedgerEvent>,
}

impl JourneyReport {
    pub fn from_entry(tag_hash: Digest, entry: Option<TagLedgerEntry>) -> Self {
        let mut events = entry.map(|e| e.events).unwrap_or_default();
        events.sort_by_key(|e| e.seq);
        JourneyReport { tag_hash, events }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawalReceipt {
    pub tag_hash: Digest,
    pub seq: u64,
    /// The tag was already being withdrawn; `seq` is the original request.
    pub duplicate: bool,
}

/// Answers `challenge` for the tag in `record`.
pub fn build_withdrawal_request(
    record: &LocalConsentRecord,
    key: &KeyPair,
    challenge: &Challenge,
) -> WithdrawalRequest {
    WithdrawalRequest {
        tag_hash: record.hash,
        tag_signature: record.sig.clone(),
        public_key: key.public_key().clone(),
        challenge_id: challenge.id.clone(),
        challenge_signature: key.sign(&challenge.digest()),
    }
}
