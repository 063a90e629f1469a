//! The web side's consent tagging processor: links submitted data with its
//! consent entry, and filters, masks or tags data served to crawlers.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::consent::{attach_tag, mask_content, wire, ConsentConfig, ConsentTag, TaggedContent};
use crate::crypto::{keccak256, Digest, SignatureBytes};
use crate::error::SubmissionError;
use crate::request::{is_data_method, HttpRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDatum {
    pub data_id: u64,
    pub content: String,
    pub author: String,
    pub consent_id: Option<u64>,
    pub non_crawlable: bool,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentStoreEntry {
    pub consent_id: u64,
    pub data_id: u64,
    pub hash: Digest,
    pub signature: SignatureBytes,
    pub config: ConsentConfig,
}

impl ConsentStoreEntry {
    pub fn tag(&self) -> ConsentTag {
        ConsentTag {
            hash: self.hash,
            signature: self.signature.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub data_id: u64,
    pub consent_id: Option<u64>,
    pub tag: Option<ConsentTag>,
}

/// Who the content is being rendered for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ServeView<'a> {
    Regular,
    Crawler(&'a str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServedItem {
    pub data_id: u64,
    pub item: TaggedContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ServeResult {
    pub items: Vec<ServedItem>,
    /// Tags served with attributes; one crawl event each.
    pub served_tags: Vec<Digest>,
}

/// One entry of the structured `/api/posts` payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiItem {
    pub id: u64,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consent_tag_hash: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consent_tag_sig: Option<SignatureBytes>,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub masked: bool,
}

impl From<&ServedItem> for ApiItem {
    fn from(s: &ServedItem) -> Self {
        ApiItem {
            id: s.data_id,
            content: s.item.content.clone(),
            consent_tag_hash: s.item.tag.as_ref().map(|t| t.hash),
            consent_tag_sig: s.item.tag.as_ref().map(|t| t.signature.clone()),
            masked: s.item.masked,
        }
    }
}

/// Data and consent tables. Every mutation bumps `version`, which response
/// caches key on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteStore {
    data: BTreeMap<u64, StoredDatum>,
    consents: BTreeMap<u64, ConsentStoreEntry>,
    next_data_id: u64,
    next_consent_id: u64,
    version: u64,
}

struct ConsentHeaders {
    config: ConsentConfig,
    tag: ConsentTag,
}

fn read_consent_headers(req: &HttpRequest) -> Result<Option<ConsentHeaders>, SubmissionError> {
    let h = &req.headers;
    let config = h.get(wire::CONSENT_CONFIG);
    let hash = h.get(wire::CONSENT_TAG_HASH);
    let sig = h.get(wire::CONSENT_TAG_SIG);
    match (config, hash, sig) {
        (None, None, None) => Ok(None),
        (Some(config), Some(hash), Some(sig)) => Ok(Some(ConsentHeaders {
            config: ConsentConfig::parse(config)?,
            tag: ConsentTag {
                hash: Digest::from_hex(hash)?,
                signature: SignatureBytes::from_hex(sig)?,
            },
        })),
        (None, _, _) => Err(SubmissionError::IncompleteConsent(wire::CONSENT_CONFIG)),
        (_, None, _) => Err(SubmissionError::IncompleteConsent(wire::CONSENT_TAG_HASH)),
        (_, _, None) => Err(SubmissionError::IncompleteConsent(wire::CONSENT_TAG_SIG)),
    }
}

impl SiteStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn data(&self) -> impl Iterator<Item = &StoredDatum> {
        self.data.values()
    }

    pub fn consents(&self) -> impl Iterator<Item = &ConsentStoreEntry> {
        self.consents.values()
    }

    pub fn datum(&self, data_id: u64) -> Option<&StoredDatum> {
        self.data.get(&data_id)
    }

    pub fn consent_for(&self, datum: &StoredDatum) -> Option<&ConsentStoreEntry> {
        datum.consent_id.and_then(|id| self.consents.get(&id))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Persists a submitted datum and, when the request carries consent
    /// headers, its linked consent entry. The tag hash must equal the
    /// Keccak-256 of the body. The non-crawlable marker is consumed here.
    pub fn handle_data_submission(
        &mut self,
        req: &HttpRequest,
        author: &str,
        now: u64,
    ) -> Result<Submission, SubmissionError> {
        if !is_data_method(&req.method) {
            return Err(SubmissionError::MethodNotAllowed(req.method.clone()));
        }
        if req.body.is_empty() {
            return Err(SubmissionError::EmptyBody);
        }
        let content = core::str::from_utf8(&req.body).map_err(|_| SubmissionError::NotText)?;
        let non_crawlable = req.headers.get(wire::NON_CRAWLABLE) == Some("1");
        let consent = read_consent_headers(req)?;
        if non_crawlable && consent.is_some() {
            return Err(SubmissionError::Contradictory);
        }
        if let Some(c) = &consent {
            if keccak256(&req.body) != c.tag.hash {
                return Err(SubmissionError::TagMismatch);
            }
        }

        self.next_data_id += 1;
        let data_id = self.next_data_id;
        self.data.insert(
            data_id,
            StoredDatum {
                data_id,
                content: String::from(content),
                author: String::from(author),
                consent_id: None,
                non_crawlable,
                created_at: now,
            },
        );
        let mut out = Submission {
            data_id,
            consent_id: None,
            tag: None,
        };
        if let Some(c) = consent {
            self.next_consent_id += 1;
            let consent_id = self.next_consent_id;
            self.consents.insert(
                consent_id,
                ConsentStoreEntry {
                    consent_id,
                    data_id,
                    hash: c.tag.hash,
                    signature: c.tag.signature.clone(),
                    config: c.config,
                },
            );
            if let Some(d) = self.data.get_mut(&data_id) {
                d.consent_id = Some(consent_id);
            }
            out.consent_id = Some(consent_id);
            out.tag = Some(c.tag);
        }
        self.version += 1;
        Ok(out)
    }

    /// Content as served to `view`. Regular visitors see everything plainly.
    /// Crawlers never see non-crawlable data; tagged data is tag-annotated
    /// when its config allows the crawler and masked otherwise.
    pub fn serve(&self, view: ServeView<'_>) -> ServeResult {
        let mut out = ServeResult::default();
        for d in self.data.values() {
            let item = match view {
                ServeView::Regular => TaggedContent::plain(d.content.clone()),
                ServeView::Crawler(name) => {
                    if d.non_crawlable {
                        continue;
                    }
                    match self.consent_for(d) {
                        None => TaggedContent::plain(d.content.clone()),
                        Some(entry) => {
                            if entry.config.check(name).is_allow() {
                                out.served_tags.push(entry.hash);
                                attach_tag(TaggedContent::plain(d.content.clone()), entry.tag())
                                    .expect("fresh item is unmasked")
                            } else {
                                mask_content(TaggedContent::plain(d.content.clone()))
                            }
                        }
                    }
                }
            };
            out.items.push(ServedItem {
                data_id: d.data_id,
                item,
            });
        }
        out
    }

    /// Removes every datum and consent entry linked to `hash`. Returns the
    /// removed data ids.
    pub fn remove_by_hash(&mut self, hash: &Digest) -> Vec<u64> {
        let consent_ids: Vec<u64> = self
            .consents
            .values()
            .filter(|c| c.hash == *hash)
            .map(|c| c.consent_id)
            .collect();
        let mut removed = Vec::new();
        for id in consent_ids {
            if let Some(entry) = self.consents.remove(&id) {
                if self.data.remove(&entry.data_id).is_some() {
                    removed.push(entry.data_id);
                }
            }
        }
        if !removed.is_empty() {
            self.version += 1;
        }
        removed
    }

    pub fn holds_hash(&self, hash: &Digest) -> bool {
        self.consents.values().any(|c| c.hash == *hash)
            || self.data.values().any(|d| keccak256(d.content.as_bytes()) == *hash)
    }
}
