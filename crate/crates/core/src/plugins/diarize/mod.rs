//! Enrollment-based speaker diarization: average a few annotated seconds per
//! speaker into a centroid, then label every window of the recording by its
//! cosine similarity to those centroids.

mod embed;
mod formats;
mod pipeline;

pub use embed::{decode_wav, Embedder, Pcm, SpectralEmbedder, SPECTRAL_DIM};
pub use formats::{
    segments_to_json, Annotation, EnrollmentDoc, ProfileArtifact, WindowsDoc, PROFILE_ARTIFACT_FORMAT,
};
pub use pipeline::{
    classify, cosine, diarize, enroll, merge_segments, smooth, DiarizeConfig, DiarizeInput, DiarizeOutput,
    Enrollment, Segment, SpeakerProfile, WindowLabel, UNKNOWN_LABEL,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Embedding of one analysis window of audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingWindow {
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
    pub vec: Vec<f64>,
}

impl EmbeddingWindow {
    pub fn center(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiarizeError {
    #[error("unsupported audio: {0}")]
    Audio(String),
    #[error("zero-length audio")]
    EmptyAudio,
    #[error("no annotations given")]
    NoAnnotations,
    #[error("annotation {speaker:?} [{start}, {end}) overlaps no analysis window")]
    NoOverlap { speaker: String, start: f64, end: f64 },
    #[error("annotation {speaker:?} has an empty or inverted span [{start}, {end})")]
    BadSpan { speaker: String, start: f64, end: f64 },
    #[error("label {0:?} is reserved")]
    ReservedLabel(String),
    #[error("speaker {0:?} is enrolled only on silent windows")]
    SilentSpeaker(String),
    #[error("no speaker profiles: provide annotations or use an enrolled model")]
    NoProfiles,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid window: {0}")]
    BadWindow(String),
    #[error("invalid config: {0}")]
    BadConfig(&'static str),
    #[error("malformed document: {0}")]
    Format(String),
    #[error("cancelled")]
    Cancelled,
}

#[cfg(test)]
pub(crate) use embed::tests as tests_support;
