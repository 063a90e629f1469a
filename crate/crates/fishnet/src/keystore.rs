//! The user's key, consent settings and local consent records on disk.
//!
//! Layout of a keystore directory:
//! `key` (secret scalar hex), `consent-config` (header value) and
//! `records.jsonl` (one [`LocalConsentRecord`] per line).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use fishnet_core::client::LocalConsentRecord;
use fishnet_core::{ConsentConfig, Digest, KeyPair};

use crate::error::{Error, IoContext, Result};
use crate::jsonl;

pub const KEYSTORE_ENV: &str = "FISHNET_KEYSTORE";

const KEY_FILE: &str = "key";
const CONFIG_FILE: &str = "consent-config";
const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Clone, Default)]
pub struct RecordFilter {
    pub url_contains: Option<String>,
    pub since: Option<u64>,
    pub until: Option<u64>,
}

impl RecordFilter {
    fn matches(&self, r: &LocalConsentRecord) -> bool {
        self.url_contains.as_deref().map_or(true, |s| r.url.contains(s))
            && self.since.map_or(true, |t| r.ts >= t)
            && self.until.map_or(true, |t| r.ts <= t)
    }
}

#[derive(Debug)]
pub struct Keystore {
    dir: PathBuf,
    // Serializes appends from concurrent proxy requests.
    write: Mutex<()>,
}

/// Reads a secret key file as written by `keygen`.
pub fn read_key_file(path: &Path) -> Result<KeyPair> {
    let text = fs::read_to_string(path).at(path)?;
    KeyPair::from_secret_hex(text.trim()).map_err(|e| Error::Keystore(format!("{}: {e}", path.display())))
}

impl Keystore {
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        Keystore {
            dir: dir.into(),
            write: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key_path(&self) -> PathBuf {
        self.dir.join(KEY_FILE)
    }

    /// Creates the directory and a key. Refuses to overwrite unless `force`.
    pub fn init(&self, key: &KeyPair, force: bool) -> Result<()> {
        fs::create_dir_all(&self.dir).at(&self.dir)?;
        let path = self.key_path();
        if path.exists() && !force {
            return Err(Error::Keystore(format!("{} already exists", path.display())));
        }
        fs::write(&path, format!("{}\n", key.secret_hex())).at(&path)?;
        if !self.dir.join(CONFIG_FILE).exists() {
            self.set_config(&ConsentConfig::default())?;
        }
        Ok(())
    }

    pub fn key(&self) -> Result<KeyPair> {
        let path = self.key_path();
        if !path.exists() {
            return Err(Error::Keystore(format!(
                "no key at {}; run `fishnet keygen` first",
                path.display()
            )));
        }
        read_key_file(&path)
    }

    pub fn config(&self) -> Result<ConsentConfig> {
        let path = self.dir.join(CONFIG_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(ConsentConfig::parse(text.trim())?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ConsentConfig::default()),
            Err(e) => Err(e).at(path),
        }
    }

    pub fn set_config(&self, config: &ConsentConfig) -> Result<()> {
        let path = self.dir.join(CONFIG_FILE);
        fs::write(&path, format!("{}\n", config.serialize())).at(path)
    }

    pub fn append_record(&self, record: &LocalConsentRecord) -> Result<()> {
        let _guard = self.write.lock().unwrap_or_else(|p| p.into_inner());
        fs::create_dir_all(&self.dir).at(&self.dir)?;
        jsonl::append(&self.dir.join(RECORDS_FILE), record)
    }

    /// Matching records, newest first, plus the count of unreadable lines.
    pub fn list_records(&self, filter: &RecordFilter) -> Result<(Vec<LocalConsentRecord>, usize)> {
        let read = jsonl::read_lenient::<LocalConsentRecord>(&self.dir.join(RECORDS_FILE))?;
        let mut records: Vec<_> = read
            .records
            .into_iter()
            .enumerate()
            .filter(|(_, r)| filter.matches(r))
            .collect();
        // Newest first; among equal timestamps the later line wins.
        records.sort_by(|(ia, a), (ib, b)| b.ts.cmp(&a.ts).then(ib.cmp(ia)));
        Ok((records.into_iter().map(|(_, r)| r).collect(), read.skipped))
    }

    pub fn find(&self, hash: &Digest) -> Result<LocalConsentRecord> {
        let (records, _) = self.list_records(&RecordFilter::default())?;
        records
            .into_iter()
            .find(|r| r.hash == *hash)
            .ok_or_else(|| Error::UnknownTag(hash.to_hex()))
    }
}
