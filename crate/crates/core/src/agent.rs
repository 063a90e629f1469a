//! Registered crawler identities and visitor classification.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::net::IpAddr;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{keccak256, verify_digest, KeyPair, PublicKey, SignatureBytes};
use crate::error::AgentError;

/// Maximum allowed distance between a crawler's signed timestamp and now.
pub const TIMESTAMP_WINDOW_SECS: u64 = 120;

/// An IPv4 or IPv6 network block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cidr {
    addr: IpAddr,
    prefix: u8,
}

impl Cidr {
    pub fn contains(&self, ip: &IpAddr) -> bool {
        match (self.addr, ip) {
            (IpAddr::V4(net), IpAddr::V4(ip)) => prefix_match(&net.octets(), &ip.octets(), self.prefix),
            (IpAddr::V6(net), IpAddr::V6(ip)) => prefix_match(&net.octets(), &ip.octets(), self.prefix),
            (IpAddr::V4(_), IpAddr::V6(v6)) => match v6.to_ipv4_mapped() {
                Some(v4) => self.contains(&IpAddr::V4(v4)),
                None => false,
            },
            (IpAddr::V6(_), IpAddr::V4(_)) => false,
        }
    }
}

fn prefix_match(net: &[u8], ip: &[u8], prefix: u8) -> bool {
    let full = (prefix / 8) as usize;
    if net[..full] != ip[..full] {
        return false;
    }
    let rem = prefix % 8;
    if rem == 0 {
        return true;
    }
    let mask = 0xffu8 << (8 - rem);
    net[full] & mask == ip[full] & mask
}

impl FromStr for Cidr {
    type Err = AgentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AgentError::BadCidr(s.to_string());
        let (addr, prefix) = s.split_once('/').ok_or_else(bad)?;
        let addr: IpAddr = addr.parse().map_err(|_| bad())?;
        let prefix: u8 = prefix.parse().map_err(|_| bad())?;
        let max = if addr.is_ipv4() { 32 } else { 128 };
        if prefix > max {
            return Err(bad());
        }
        Ok(Cidr { addr, prefix })
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.prefix)
    }
}

impl Serialize for Cidr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cidr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A crawler identity as published in the ledger's agent registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlerAgentConfig {
    pub name: String,
    pub user_agent_pattern: String,
    pub ip_ranges: Vec<Cidr>,
    pub public_key: PublicKey,
}

impl CrawlerAgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.name.is_empty()
            || self
                .name
                .chars()
                .any(|c| c == ':' || c == ';' || c.is_whitespace() || c.is_control())
        {
            return Err(AgentError::BadName);
        }
        if self.user_agent_pattern.is_empty() {
            return Err(AgentError::EmptyPattern);
        }
        if self.ip_ranges.is_empty() {
            return Err(AgentError::NoRanges);
        }
        Ok(())
    }

    pub fn admits_ip(&self, ip: &IpAddr) -> bool {
        self.ip_ranges.iter().any(|r| r.contains(ip))
    }
}

/// What a server knows about a request's origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitorMeta {
    pub user_agent: String,
    pub source_ip: IpAddr,
    pub timestamp: Option<String>,
    pub signature: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureCheck {
    NotPresented,
    Valid,
    Invalid,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "lowercase")]
pub enum VisitorKind {
    Regular,
    Crawler(String),
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitorClass {
    pub kind: VisitorKind,
    pub matched_pattern: Option<String>,
    pub source_ip: IpAddr,
    pub ip_in_range: bool,
    pub signature: SignatureCheck,
}

impl VisitorClass {
    pub fn crawler_name(&self) -> Option<&str> {
        match &self.kind {
            VisitorKind::Crawler(name) => Some(name),
            _ => None,
        }
    }
}

/// Signs the decimal timestamp string the way crawlers prove their identity.
pub fn sign_timestamp(key: &KeyPair, unix_secs: u64) -> SignatureBytes {
    key.sign(&keccak256(unix_secs.to_string().as_bytes()))
}

fn check_signature(agent: &CrawlerAgentConfig, meta: &VisitorMeta, now: u64) -> SignatureCheck {
    let (ts, sig) = match (&meta.timestamp, &meta.signature) {
        (None, None) => return SignatureCheck::NotPresented,
        (Some(ts), Some(sig)) => (ts, sig),
        _ => return SignatureCheck::Invalid,
    };
    let Ok(sig) = SignatureBytes::from_hex(sig) else {
        return SignatureCheck::Invalid;
    };
    if !verify_digest(&agent.public_key, &keccak256(ts.as_bytes()), sig.as_slice()) {
        return SignatureCheck::Invalid;
    }
    // Only canonical decimal strings count as timestamps.
    match ts.parse::<u64>() {
        Ok(t) if t.to_string() == *ts => {
            if t.abs_diff(now) <= TIMESTAMP_WINDOW_SECS {
                SignatureCheck::Valid
            } else {
                SignatureCheck::Stale
            }
        }
        _ => SignatureCheck::Invalid,
    }
}

fn matching_agent<'a>(meta: &VisitorMeta, registry: &'a [CrawlerAgentConfig]) -> Option<&'a CrawlerAgentConfig> {
    registry
        .iter()
        .filter(|a| meta.user_agent.contains(a.user_agent_pattern.as_str()))
        .max_by(|a, b| {
            a.user_agent_pattern
                .len()
                .cmp(&b.user_agent_pattern.len())
                .then_with(|| b.name.cmp(&a.name))
        })
}

fn trusted(ip_in_range: bool, signature: SignatureCheck) -> bool {
    ip_in_range && matches!(signature, SignatureCheck::NotPresented | SignatureCheck::Valid)
}

/// Classifies a visitor against the registry snapshot. When several patterns
/// match the user agent the longest one wins, ties broken by name.
pub fn identify_visitor(meta: &VisitorMeta, registry: &[CrawlerAgentConfig], now: u64) -> VisitorClass {
    let Some(agent) = matching_agent(meta, registry) else {
        return VisitorClass {
            kind: VisitorKind::Regular,
            matched_pattern: None,
            source_ip: meta.source_ip,
            ip_in_range: false,
            signature: SignatureCheck::NotPresented,
        };
    };
    let ip_in_range = agent.admits_ip(&meta.source_ip);
    let signature = check_signature(agent, meta, now);
    VisitorClass {
        kind: if trusted(ip_in_range, signature) {
            VisitorKind::Crawler(agent.name.clone())
        } else {
            VisitorKind::Rejected
        },
        matched_pattern: Some(agent.user_agent_pattern.clone()),
        source_ip: meta.source_ip,
        ip_in_range,
        signature,
    }
}

/// The outcome of [`identify_visitor`], borrowing the matched entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission<'a> {
    Regular,
    Crawler(&'a CrawlerAgentConfig),
    Rejected,
}

/// Same decision as [`identify_visitor`] without allocating.
pub fn admit_visitor<'a>(meta: &VisitorMeta, registry: &'a [CrawlerAgentConfig], now: u64) -> Admission<'a> {
    match matching_agent(meta, registry) {
        None => Admission::Regular,
        Some(agent) if trusted(agent.admits_ip(&meta.source_ip), check_signature(agent, meta, now)) => {
            Admission::Crawler(agent)
        }
        Some(_) => Admission::Rejected,
    }
}
