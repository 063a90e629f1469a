//! Gzip-compressed JSON-lines datasets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use fishnet_core::dataset::DatasetRecord;
use fishnet_core::Digest;

use crate::error::{IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub bytes: u64,
}

/// Writes `records` to `path`. The file appears only once complete; on
/// failure nothing is left behind.
pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<DatasetSummary> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).at(dir)?;
    {
        let mut gz = GzEncoder::new(BufWriter::new(tmp.as_file()), Compression::default());
        for r in records {
            serde_json::to_writer(&mut gz, r)?;
            gz.write_all(b"\n").at(path)?;
        }
        gz.finish().at(path)?.flush().at(path)?;
    }
    let file = tmp.persist(path).map_err(|e| e.error).at(path)?;
    let bytes = file.metadata().at(path)?.len();
    Ok(DatasetSummary {
        count: records.len(),
        bytes,
    })
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = File::open(path).at(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(GzDecoder::new(file)).lines() {
        let line = line.at(path)?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Drops every record carrying `hash`. Returns how many were removed.
pub fn scrub_dataset(path: &Path, hash: &Digest) -> Result<usize> {
    let records = read_dataset(path)?;
    let before = records.len();
    let kept: Vec<DatasetRecord> = records
        .into_iter()
        .filter(|r| r.consent_tag_hash.as_ref() != Some(hash))
        .collect();
    let removed = before - kept.len();
    if removed > 0 {
        write_dataset(&kept, path)?;
    }
    Ok(removed)
}
