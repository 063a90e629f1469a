use std::path::PathBuf;

use fishnet_core::ledger::RejectReason;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("ledger answered {status}: {message}")]
    Ledger { status: u16, message: String },
    #[error("withdrawal rejected: {}", .0.as_str())]
    Rejected(RejectReason),
    #[error("unknown tag {0}")]
    UnknownTag(String),
    #[error("keystore: {0}")]
    Keystore(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Consent(#[from] fishnet_core::error::ConfigError),
    #[error(transparent)]
    Crypto(#[from] fishnet_core::error::CryptoError),
    #[error("timed out waiting for {0}")]
    Timeout(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
