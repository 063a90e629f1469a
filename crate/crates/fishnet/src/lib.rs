//! Services and tools around [`fishnet_core`]: the ledger and web server over
//! HTTP, the tagging proxy, the crawler, the ML custodian, and the scenario
//! and benchmark drivers behind the `fishnet` binary.

pub mod bench;
pub mod crawler;
pub mod dataset_io;
pub mod error;
pub mod http1;
pub mod jsonl;
pub mod keystore;
pub mod ledger_http;
pub mod ml_party;
pub mod proxy;
pub mod queue;
pub mod scenario;
pub mod server;

pub use error::{Error, Result};
pub use fishnet_core as core;

/// Wall-clock unix seconds.
pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
