//! Stage-file JSONL conventions: a header line first, one record per line
//! after it, schema checking on read, and id-based resumption on write.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// First line of every stage file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    /// Stage schema tag, e.g. "c2q/trees/v1"; readers verify it.
    pub schema: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl FileHeader {
    pub fn new(schema: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            schema: schema.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed,
        }
    }
}

/// A fully read stage file.
#[derive(Debug, Clone)]
pub struct StageFile<T> {
    pub header: FileHeader,
    pub rows: Vec<T>,
}

/// Reads and schema-checks a stage file.
pub fn read_stage<T: DeserializeOwned>(path: &Path, schema: &str) -> anyhow::Result<StageFile<T>> {
    let file = File::open(path)
        .map_err(|e| anyhow::anyhow!("cannot open {}: {e}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| anyhow::anyhow!("{} is empty (no header)", path.display()))?;
    let header: FileHeader = serde_json::from_str(&header_line)
        .map_err(|e| anyhow::anyhow!("{} has no valid header line: {e}", path.display()))?;
    if header.schema != schema {
        anyhow::bail!(
            "stage mismatch: {} has schema `{}`, expected `{schema}`",
            path.display(),
            header.schema
        );
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(&line).map_err(|e| {
            anyhow::anyhow!("{} line {}: bad record: {e}", path.display(), i + 2)
        })?;
        rows.push(row);
    }
    Ok(StageFile { header, rows })
}

/// Writes a whole stage file (truncating): header first, then rows.
pub fn write_stage<T: Serialize>(
    path: &Path,
    header: &FileHeader,
    rows: impl IntoIterator<Item = T>,
) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", serde_json::to_string(header)?)?;
    for row in rows {
        writeln!(out, "{}", serde_json::to_string(&row)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Append-mode stage writer that skips ids already present in the file.
///
/// Reopening with a different schema, config hash, or seed is refused:
/// resuming under changed semantics would mix incompatible records.
pub struct ResumableWriter {
    out: BufWriter<File>,
    existing: BTreeSet<String>,
}

impl ResumableWriter {
    pub fn open(path: &Path, header: &FileHeader) -> anyhow::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut existing = BTreeSet::new();
        if path.exists() {
            let file = File::open(path)?;
            let mut lines = BufReader::new(file).lines();
            if let Some(first) = lines.next().transpose()? {
                let found: FileHeader = serde_json::from_str(&first).map_err(|e| {
                    anyhow::anyhow!("{} has no valid header line: {e}", path.display())
                })?;
                if found != *header {
                    anyhow::bail!(
                        "cannot resume {}: its header {:?} does not match this run {:?}; \
                         delete the file to start over",
                        path.display(),
                        found,
                        header
                    );
                }
            }
            for line in lines {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(&line)?;
                if let Some(id) = value
                    .get("id")
                    .or_else(|| value.get("c2_id"))
                    .and_then(|v| v.as_str())
                {
                    existing.insert(id.to_string());
                }
            }
            let out = BufWriter::new(OpenOptions::new().append(true).open(path)?);
            return Ok(Self { out, existing });
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", serde_json::to_string(header)?)?;
        out.flush()?;
        Ok(Self {
            out,
            existing: BTreeSet::new(),
        })
    }

    /// Whether this id is already present (and should be skipped).
    pub fn contains(&self, id: &str) -> bool {
        self.existing.contains(id)
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> anyhow::Result<()> {
        writeln!(self.out, "{}", serde_json::to_string(row)?)?;
        self.out.flush()?;
        Ok(())
    }
}
