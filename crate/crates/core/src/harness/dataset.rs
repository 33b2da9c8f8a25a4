use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    #[default]
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub code: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwe: Option<String>,
    #[serde(default)]
    pub split: Split,
}

/// A line that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ingested {
    pub records: Vec<DatasetRecord>,
    pub rejects: Vec<SchemaError>,
}

/// Validates JSON-lines text; blank lines are ignored.
pub fn ingest_str(text: &str) -> Ingested {
    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let reject = |reason: String| SchemaError { line: i + 1, reason };
        match serde_json::from_str::<DatasetRecord>(raw) {
            Err(e) => out.rejects.push(reject(e.to_string())),
            Ok(r) if r.label > 1 => out.rejects.push(reject(format!("label must be 0 or 1, got {}", r.label))),
            Ok(r) if r.id.is_empty() => out.rejects.push(reject("empty id".into())),
            Ok(r) if r.code.trim().is_empty() => out.rejects.push(reject("empty code".into())),
            Ok(r) if !seen.insert(r.id.clone()) => out.rejects.push(reject(format!("duplicate id `{}`", r.id))),
            Ok(r) => out.records.push(r),
        }
    }
    out
}

pub fn ingest(path: &Path) -> std::io::Result<Ingested> {
    Ok(ingest_str(&std::fs::read_to_string(path)?))
}
