use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("digest must be 64 lowercase hex characters")]
    BadDigest,
    #[error("invalid lowercase hex")]
    BadHex,
    #[error("invalid P-384 public key")]
    BadPublicKey,
    #[error("invalid P-384 secret key")]
    BadSecretKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("malformed consent entry `{0}`")]
    MalformedPair(String),
    #[error("consent flag `{0}` is not 0 or 1")]
    BadFlag(String),
    #[error("empty crawler name in entry `{0}`")]
    EmptyName(String),
    #[error("crawler name `{0}` contains a reserved character")]
    InvalidName(String),
    #[error("duplicate crawler name `{0}`")]
    DuplicateName(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContentError {
    #[error("cannot attach a consent tag to masked content")]
    AttachToMasked,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("crawler name must be a non-empty token")]
    BadName,
    #[error("user-agent pattern must not be empty")]
    EmptyPattern,
    #[error("crawler must declare at least one IP range")]
    NoRanges,
    #[error("invalid CIDR block `{0}`")]
    BadCidr(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmissionError {
    #[error("method `{0}` does not carry storable data")]
    MethodNotAllowed(String),
    #[error("request body is empty")]
    EmptyBody,
    #[error("request body is not UTF-8 text")]
    NotText,
    #[error("consent headers are incomplete: missing {0}")]
    IncompleteConsent(&'static str),
    #[error("malformed consent config: {0}")]
    BadConfig(#[from] ConfigError),
    #[error("malformed consent tag: {0}")]
    BadTag(#[from] CryptoError),
    #[error("consent tag hash does not match the request body")]
    TagMismatch,
    #[error("request carries both consent headers and the non-crawlable marker")]
    Contradictory,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch of {count} entries exceeds the {limit}-entry transaction capacity")]
    CapacityExceeded { count: usize, limit: usize },
    #[error("unknown tag {0}")]
    UnknownTag(String),
    #[error("party `{party}` is not a custodian of tag {tag}")]
    NotCustodian { party: String, tag: String },
    #[error("tag {0} has no active withdrawal")]
    NoActiveWithdrawal(String),
    #[error("invalid agent configuration: {0}")]
    Agent(#[from] AgentError),
    #[error("event kind `{0}` cannot be appended directly")]
    ReservedKind(&'static str),
}
