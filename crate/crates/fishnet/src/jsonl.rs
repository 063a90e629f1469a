//! Line-delimited JSON files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{IoContext, Result};

/// Records that parsed, plus how many lines did not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lenient<T> {
    pub records: Vec<T>,
    pub skipped: usize,
}

/// Reads every parseable line. A missing file reads as empty.
pub fn read_lenient<T: DeserializeOwned>(path: &Path) -> Result<Lenient<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(Lenient {
                records: Vec::new(),
                skipped: 0,
            })
        }
        Err(e) => return Err(e).at(path),
    };
    let mut out = Lenient {
        records: Vec::new(),
        skipped: 0,
    };
    for line in BufReader::new(file).lines() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.records.push(r),
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

pub fn append<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).at(path)?;
    f.write_all(&line).at(path)
}

/// Replaces the file contents atomically.
pub fn write_all<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).at(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").at(path)?;
        }
        w.flush().at(path)?;
    }
    tmp.persist(path).map_err(|e| e.error).at(path)?;
    Ok(())
}

/// Writes one JSON document atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).at(dir)?;
    serde_json::to_writer_pretty(tmp.as_file(), value)?;
    tmp.persist(path).map_err(|e| e.error).at(path)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e).at(path),
    }
}
