use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BlobRef, DatasetId, InputKind, Timestamp, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    TextPairsJsonl,
    EnrollmentJson,
    EmbeddingWindowsJson,
}

impl DatasetFormat {
    /// Task input kind a dataset of this format can feed.
    pub fn input_kind(self) -> InputKind {
        match self {
            DatasetFormat::TextPairsJsonl => InputKind::TextPairs,
            DatasetFormat::EnrollmentJson => InputKind::EnrollmentAnnotations,
            DatasetFormat::EmbeddingWindowsJson => InputKind::EmbeddingWindows,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetFormat::TextPairsJsonl => "text_pairs_jsonl",
            DatasetFormat::EnrollmentJson => "enrollment_json",
            DatasetFormat::EmbeddingWindowsJson => "embedding_windows_json",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned())).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: DatasetId,
    pub owner: UserId,
    pub task_name: String,
    pub format: DatasetFormat,
    pub item_count: u64,
    pub blob: BlobRef,
    pub created_at: Timestamp,
}

/// One `{"source", "target"}` record of a text_pairs_jsonl dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("malformed document: {0}")]
    Document(String),
    #[error("dataset has no records")]
    Empty,
}

/// Parses text_pairs_jsonl. Blank lines are ignored; line numbers are 1-based.
pub fn read_text_pairs(bytes: &[u8]) -> Result<Vec<TextPair>, DatasetError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        DatasetError::Line {
            line,
            message: "invalid UTF-8".into(),
        }
    })?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: TextPair = serde_json::from_str(line).map_err(|e| DatasetError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(pairs)
}
