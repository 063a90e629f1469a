use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::consent::ConsentTag;
use crate::crypto::{keccak256, Digest, SignatureBytes};

/// One scraped element. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub url: String,
    pub selector: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consent_tag_hash: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consent_tag_sig: Option<SignatureBytes>,
    pub crawl_time: u64,
    pub crawler: String,
    pub masked: bool,
}

impl DatasetRecord {
    pub fn tag(&self) -> Option<ConsentTag> {
        match (&self.consent_tag_hash, &self.consent_tag_sig) {
            (Some(hash), Some(sig)) => Some(ConsentTag {
                hash: *hash,
                signature: sig.clone(),
            }),
            _ => None,
        }
    }

    /// Tag fields are both present or both absent.
    pub fn tag_fields_paired(&self) -> bool {
        self.consent_tag_hash.is_some() == self.consent_tag_sig.is_some()
    }

    /// For tagged, unmasked records: the content still hashes to the tag.
    pub fn content_matches_tag(&self) -> bool {
        match &self.consent_tag_hash {
            Some(h) => keccak256(self.content.as_bytes()) == *h,
            None => true,
        }
    }
}
