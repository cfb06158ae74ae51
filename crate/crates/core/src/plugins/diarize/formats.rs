use serde::{Deserialize, Serialize};

use super::pipeline::{check_windows, Segment, SpeakerProfile};
use super::{DiarizeError, EmbeddingWindow};

pub const PROFILE_ARTIFACT_FORMAT: &str = "annolab.diarize.v1";

/// One labeled span of enrollment audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
}

/// Precomputed embeddings as uploaded by clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowsDoc {
    pub dim: usize,
    pub windows: Vec<EmbeddingWindow>,
}

impl WindowsDoc {
    pub fn parse(bytes: &[u8]) -> Result<Vec<EmbeddingWindow>, DiarizeError> {
        let doc: WindowsDoc = serde_json::from_slice(bytes).map_err(|e| DiarizeError::Format(e.to_string()))?;
        doc.into_windows()
    }

    pub fn into_windows(self) -> Result<Vec<EmbeddingWindow>, DiarizeError> {
        if self.dim == 0 {
            return Err(DiarizeError::Format("dim must be positive".into()));
        }
        if let Some(w) = self.windows.iter().find(|w| w.vec.len() != self.dim) {
            return Err(DiarizeError::Dimension {
                expected: self.dim,
                got: w.vec.len(),
            });
        }
        check_windows(&self.windows)?;
        Ok(self.windows)
    }
}

/// An enrollment dataset: annotations plus the audio (base64 WAV) or the
/// windows they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentDoc {
    pub annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<WindowsDoc>,
}

impl EnrollmentDoc {
    pub fn parse(bytes: &[u8]) -> Result<Self, DiarizeError> {
        let doc: Self = serde_json::from_slice(bytes).map_err(|e| DiarizeError::Format(e.to_string()))?;
        if doc.annotations.is_empty() {
            return Err(DiarizeError::NoAnnotations);
        }
        if doc.audio_b64.is_some() == doc.windows.is_some() {
            return Err(DiarizeError::Format("exactly one of audio_b64 or windows is required".into()));
        }
        Ok(doc)
    }
}

/// Trained diarize model: the enrolled speaker profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileArtifact {
    pub format: String,
    pub profiles: Vec<SpeakerProfile>,
}

impl ProfileArtifact {
    pub fn new(mut profiles: Vec<SpeakerProfile>) -> Self {
        profiles.sort_by(|a, b| a.label.cmp(&b.label));
        Self {
            format: PROFILE_ARTIFACT_FORMAT.to_owned(),
            profiles,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("profile artifact serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DiarizeError> {
        let art: Self = serde_json::from_slice(bytes).map_err(|e| DiarizeError::Format(e.to_string()))?;
        if art.format != PROFILE_ARTIFACT_FORMAT {
            return Err(DiarizeError::Format(format!("unexpected artifact format {:?}", art.format)));
        }
        Ok(art)
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Segments as JSON with times rounded to milliseconds.
pub fn segments_to_json(segments: &[Segment]) -> serde_json::Value {
    serde_json::Value::Array(
        segments
            .iter()
            .map(|s| {
                serde_json::json!({
                    "label": s.label,
                    "start": round3(s.start_s),
                    "end": round3(s.end_s),
                    "score": s.mean_score,
                })
            })
            .collect(),
    )
}
