//! Sentence records and their JSON Lines persistence.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One task sentence: source, reference and the (unordered) target phrases
/// that must appear in the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: String,
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub constraints: Vec<String>,
}

impl SentencePair {
    pub fn validate(&self) -> Result<()> {
        if self.constraints.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::data(format!("sentence {}: empty constraint phrase", self.id)));
        }
        Ok(())
    }
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Read sentence pairs and check record invariants.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<SentencePair>> {
    let pairs: Vec<SentencePair> = read_jsonl(path)?;
    for p in &pairs {
        p.validate()?;
    }
    Ok(pairs)
}
