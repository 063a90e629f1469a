//! Consent configuration grammar, consent tags, and the content transforms
//! applied when serving data to crawlers.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{Digest, SignatureBytes};
use crate::error::{ConfigError, ContentError};

/// Header and attribute names shared by clients, servers and crawlers.
pub mod wire {
    pub const CONSENT_CONFIG: &str = "X-Consent-Config";
    pub const CONSENT_TAG_HASH: &str = "X-Consent-Tag-Hash";
    pub const CONSENT_TAG_SIG: &str = "X-Consent-Tag-Sig";
    pub const NON_CRAWLABLE: &str = "X-Non-Crawlable";
    pub const CRAWLER_TIMESTAMP: &str = "X-Crawler-Timestamp";
    pub const CRAWLER_SIG: &str = "X-Crawler-Sig";
    pub const ATTR_TAG_HASH: &str = "consent-tag-hash";
    pub const ATTR_TAG_SIG: &str = "consent-tag-sig";
}

/// Text served in place of content a crawler is not allowed to see.
pub const MASK_PLACEHOLDER: &str = "[content withheld by consent policy]";

const DEFAULT_KEY: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Deny,
    Allow,
}

impl Flag {
    fn as_wire(self) -> char {
        match self {
            Flag::Deny => '0',
            Flag::Allow => '1',
        }
    }

    pub fn is_allow(self) -> bool {
        self == Flag::Allow
    }
}

/// Per-datum crawler consent: exact-name rules plus a default.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConsentConfig {
    rules: BTreeMap<String, Flag>,
    default_rule: Flag,
}

impl Default for ConsentConfig {
    fn default() -> Self {
        ConsentConfig {
            rules: BTreeMap::new(),
            default_rule: Flag::Allow,
        }
    }
}

fn validate_name(name: &str, entry: &str) -> Result<(), ConfigError> {
    if name.is_empty() {
        return Err(ConfigError::EmptyName(entry.to_string()));
    }
    if name
        .chars()
        .any(|c| c == ':' || c == ';' || c.is_whitespace() || c.is_control())
    {
        return Err(ConfigError::InvalidName(name.to_string()));
    }
    Ok(())
}

impl ConsentConfig {
    pub fn new(default_rule: Flag) -> Self {
        ConsentConfig {
            rules: BTreeMap::new(),
            default_rule,
        }
    }

    /// Adds or replaces the rule for `name`.
    pub fn with_rule(mut self, name: &str, flag: Flag) -> Result<Self, ConfigError> {
        validate_name(name, name)?;
        if name == DEFAULT_KEY {
            return Err(ConfigError::InvalidName(name.to_string()));
        }
        self.rules.insert(name.to_string(), flag);
        Ok(self)
    }

    pub fn rules(&self) -> &BTreeMap<String, Flag> {
        &self.rules
    }

    pub fn default_rule(&self) -> Flag {
        self.default_rule
    }

    /// Parses a `name:flag;name:flag` header value.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut rules = BTreeMap::new();
        let mut default_rule = None;
        for entry in text.split(';') {
            let (name, flag) = entry
                .split_once(':')
                .ok_or_else(|| ConfigError::MalformedPair(entry.to_string()))?;
            validate_name(name, entry)?;
            let flag = match flag {
                "0" => Flag::Deny,
                "1" => Flag::Allow,
                other => return Err(ConfigError::BadFlag(other.to_string())),
            };
            if name == DEFAULT_KEY {
                if default_rule.replace(flag).is_some() {
                    return Err(ConfigError::DuplicateName(name.to_string()));
                }
            } else if rules.insert(name.to_string(), flag).is_some() {
                return Err(ConfigError::DuplicateName(name.to_string()));
            }
        }
        Ok(ConsentConfig {
            rules,
            default_rule: default_rule.unwrap_or(Flag::Allow),
        })
    }

    /// Canonical header value: rules in byte order of name, `default` last.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (name, flag) in &self.rules {
            out.push_str(name);
            out.push(':');
            out.push(flag.as_wire());
            out.push(';');
        }
        out.push_str(DEFAULT_KEY);
        out.push(':');
        out.push(self.default_rule.as_wire());
        out
    }

    /// The flag governing `crawler_name`. Matching is exact and case-sensitive.
    pub fn check(&self, crawler_name: &str) -> Flag {
        self.rules.get(crawler_name).copied().unwrap_or(self.default_rule)
    }
}

pub fn parse_consent_config(text: &str) -> Result<ConsentConfig, ConfigError> {
    ConsentConfig::parse(text)
}

pub fn serialize_consent_config(config: &ConsentConfig) -> String {
    config.serialize()
}

pub fn check_consent(config: &ConsentConfig, crawler_name: &str) -> Flag {
    config.check(crawler_name)
}

impl fmt::Display for ConsentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl FromStr for ConsentConfig {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConsentConfig::parse(s)
    }
}

impl Serialize for ConsentConfig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ConsentConfig::serialize(self))
    }
}

impl<'de> Deserialize<'de> for ConsentConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ConsentConfig::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// The pair binding content to its owner's key: digest plus signature over it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConsentTag {
    pub hash: Digest,
    pub signature: SignatureBytes,
}

/// A unit of content as it is about to be served.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedContent {
    pub content: String,
    pub tag: Option<ConsentTag>,
    pub config: Option<ConsentConfig>,
    pub masked: bool,
}

impl TaggedContent {
    pub fn plain(content: impl Into<String>) -> Self {
        TaggedContent {
            content: content.into(),
            tag: None,
            config: None,
            masked: false,
        }
    }
}

/// Replaces content with the placeholder and drops tag and config.
pub fn mask_content(_item: TaggedContent) -> TaggedContent {
    TaggedContent {
        content: MASK_PLACEHOLDER.to_string(),
        tag: None,
        config: None,
        masked: true,
    }
}

pub fn attach_tag(mut item: TaggedContent, tag: ConsentTag) -> Result<TaggedContent, ContentError> {
    if item.masked {
        return Err(ContentError::AttachToMasked);
    }
    item.tag = Some(tag);
    Ok(item)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keccak256;
    use alloc::vec;

    const TABLE_ONE: &str = "GPTBot:0;Googlebot:1;default:0";

    #[test]
    fn parses_header_example() {
        let c = ConsentConfig::parse(TABLE_ONE).unwrap();
        assert_eq!(c.rules().len(), 2);
        assert_eq!(c.rules()["GPTBot"], Flag::Deny);
        assert_eq!(c.rules()["Googlebot"], Flag::Allow);
        assert_eq!(c.default_rule(), Flag::Deny);
    }

    #[test]
    fn lone_default_and_implicit_default() {
        let c = ConsentConfig::parse("default:1").unwrap();
        assert!(c.rules().is_empty());
        assert_eq!(c.default_rule(), Flag::Allow);
        let c = ConsentConfig::parse("GPTBot:0").unwrap();
        assert_eq!(c.default_rule(), Flag::Allow);
    }

    #[test]
    fn rejects_malformed_input() {
        assert_eq!(
            ConsentConfig::parse("GPTBot:2;default:1"),
            Err(ConfigError::BadFlag("2".into()))
        );
        assert_eq!(
            ConsentConfig::parse("GPTBot"),
            Err(ConfigError::MalformedPair("GPTBot".into()))
        );
        assert_eq!(ConsentConfig::parse(":1"), Err(ConfigError::EmptyName(":1".into())));
        assert_eq!(
            ConsentConfig::parse("A:1;A:0"),
            Err(ConfigError::DuplicateName("A".into()))
        );
        assert_eq!(
            ConsentConfig::parse("default:1;default:0"),
            Err(ConfigError::DuplicateName("default".into()))
        );
        assert!(ConsentConfig::parse("").is_err());
        assert!(ConsentConfig::parse("A:1;").is_err());
        assert!(ConsentConfig::parse("A :1").is_err());
    }

    #[test]
    fn serializes_canonically() {
        let c = ConsentConfig::new(Flag::Deny)
            .with_rule("Googlebot", Flag::Allow)
            .unwrap()
            .with_rule("GPTBot", Flag::Deny)
            .unwrap();
        assert_eq!(c.serialize(), TABLE_ONE);
        assert_eq!(ConsentConfig::default().serialize(), "default:1");
        // non-canonical input re-serializes canonically
        let c = ConsentConfig::parse("default:0;Googlebot:1;GPTBot:0").unwrap();
        assert_eq!(c.serialize(), TABLE_ONE);
    }

    #[test]
    fn check_reads_rules_then_default() {
        let c = ConsentConfig::parse(TABLE_ONE).unwrap();
        assert_eq!(check_consent(&c, "Googlebot"), Flag::Allow);
        assert_eq!(check_consent(&c, "GPTBot"), Flag::Deny);
        assert_eq!(check_consent(&c, "googlebot"), Flag::Deny);
        assert_eq!(check_consent(&ConsentConfig::default(), "UnknownBot"), Flag::Allow);
    }

    fn tag() -> ConsentTag {
        ConsentTag {
            hash: keccak256(b"I really love this post."),
            signature: SignatureBytes::new(vec![0xab; 96]),
        }
    }

    #[test]
    fn masking_drops_tag_and_is_idempotent() {
        let item = attach_tag(TaggedContent::plain("I really love this post."), tag()).unwrap();
        let once = mask_content(item);
        assert_eq!(once.content, MASK_PLACEHOLDER);
        assert!(once.masked && once.tag.is_none() && once.config.is_none());
        assert_eq!(mask_content(once.clone()), once);
    }

    #[test]
    fn attach_round_trips_and_rejects_masked() {
        let item = attach_tag(TaggedContent::plain("x"), tag()).unwrap();
        assert_eq!(item.tag, Some(tag()));
        let masked = mask_content(TaggedContent::plain("x"));
        assert_eq!(attach_tag(masked, tag()), Err(ContentError::AttachToMasked));
    }
}
