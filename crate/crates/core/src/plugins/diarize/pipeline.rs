use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::embed::{l2_normalize, Embedder, Pcm};
use super::formats::Annotation;
use super::{DiarizeError, EmbeddingWindow};
use crate::plugins::CancelProbe;

pub const UNKNOWN_LABEL: &str = "unknown";

/// Enrollment below this many annotated seconds gets a warning.
const MIN_SUPPORT_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiarizeConfig {
    pub window_s: f64,
    pub hop_s: f64,
    /// Best cosine below this is labeled unknown.
    pub threshold: f64,
    pub smooth_k: usize,
}

impl Default for DiarizeConfig {
    fn default() -> Self {
        Self {
            window_s: 1.0,
            hop_s: 0.5,
            threshold: 0.25,
            smooth_k: 3,
        }
    }
}

impl DiarizeConfig {
    pub fn validate(&self) -> Result<(), DiarizeError> {
        if !(self.hop_s > 0.0 && self.hop_s <= self.window_s && self.window_s.is_finite()) {
            return Err(DiarizeError::BadConfig("need 0 < hop_s <= window_s"));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(DiarizeError::BadConfig("threshold must lie in [-1, 1]"));
        }
        if self.smooth_k % 2 == 0 {
            return Err(DiarizeError::BadConfig("smooth_k must be odd"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub label: String,
    pub centroid: Vec<f64>,
    pub support_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
    #[serde(rename = "score")]
    pub mean_score: f64,
}

/// Cosine similarity; a zero vector is similar to nothing (0).
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    /// Sorted by label.
    pub profiles: Vec<SpeakerProfile>,
    pub warnings: Vec<String>,
}

/// Averages the windows under each speaker's annotations into a unit centroid.
/// A window belongs to an annotation when its center lies in `[start, end)`.
pub fn enroll(windows: &[EmbeddingWindow], annotations: &[Annotation]) -> Result<Enrollment, DiarizeError> {
    if annotations.is_empty() {
        return Err(DiarizeError::NoAnnotations);
    }
    let dim = windows.first().map_or(0, |w| w.vec.len());
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut support: BTreeMap<&str, f64> = BTreeMap::new();
    for a in annotations {
        if a.speaker == UNKNOWN_LABEL {
            return Err(DiarizeError::ReservedLabel(a.speaker.clone()));
        }
        if !(a.end > a.start) {
            return Err(DiarizeError::BadSpan {
                speaker: a.speaker.clone(),
                start: a.start,
                end: a.end,
            });
        }
        let hits: Vec<usize> = windows
            .iter()
            .enumerate()
            .filter(|(_, w)| w.center() >= a.start && w.center() < a.end)
            .map(|(i, _)| i)
            .collect();
        if hits.is_empty() {
            return Err(DiarizeError::NoOverlap {
                speaker: a.speaker.clone(),
                start: a.start,
                end: a.end,
            });
        }
        let entry = members.entry(&a.speaker).or_default();
        entry.extend(hits);
        *support.entry(&a.speaker).or_default() += a.end - a.start;
    }

    let mut profiles = Vec::new();
    let mut warnings = Vec::new();
    for (label, mut idx) in members {
        idx.sort_unstable();
        idx.dedup();
        let mut centroid = vec![0.0; dim];
        for &i in &idx {
            for (c, x) in centroid.iter_mut().zip(&windows[i].vec) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= idx.len() as f64);
        l2_normalize(&mut centroid);
        if centroid.iter().all(|&c| c == 0.0) {
            return Err(DiarizeError::SilentSpeaker(label.to_owned()));
        }
        let support_s = support[label];
        if support_s < MIN_SUPPORT_S {
            warnings.push(format!(
                "speaker {label:?} enrolled on {support_s:.2}s of audio; a few seconds per speaker is recommended"
            ));
        }
        profiles.push(SpeakerProfile {
            label: label.to_owned(),
            centroid,
            support_s,
        });
    }
    Ok(Enrollment { profiles, warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowLabel {
    pub label: String,
    pub score: f64,
}

pub const TIE_EPSILON: f64 = 1e-12;

/// Labels each window with its most similar profile, or unknown when the best
/// similarity is below `threshold`. Scores within [`TIE_EPSILON`] of the best
/// count as tied, and ties go to the smaller label, so rounding noise cannot
/// break a tie differently for a rescaled window.
pub fn classify(windows: &[EmbeddingWindow], profiles: &[SpeakerProfile], threshold: f64) -> Vec<WindowLabel> {
    let mut ordered: Vec<&SpeakerProfile> = profiles.iter().collect();
    ordered.sort_by(|a, b| a.label.cmp(&b.label));
    windows
        .iter()
        .map(|w| {
            let scores: Vec<f64> = ordered.iter().map(|p| cosine(&w.vec, &p.centroid)).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // first in label order among the near-maximal
            let best = ordered.iter().zip(&scores).find(|(_, &s)| s >= max - TIE_EPSILON);
            match best {
                Some((p, &score)) if max >= threshold => WindowLabel {
                    label: p.label.clone(),
                    score,
                },
                Some((_, &score)) => WindowLabel {
                    label: UNKNOWN_LABEL.to_owned(),
                    score,
                },
                None => WindowLabel {
                    label: UNKNOWN_LABEL.to_owned(),
                    score: 0.0,
                },
            }
        })
        .collect()
}

/// Single-pass majority filter over a centered neighborhood of `k`
/// (truncated at the edges). A position keeps its label unless another label
/// is strictly the most frequent.
pub fn smooth(labels: &[String], k: usize) -> Vec<String> {
    let half = k / 2;
    (0..labels.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(labels.len());
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for l in &labels[lo..hi] {
                *counts.entry(l.as_str()).or_default() += 1;
            }
            let max = counts.values().copied().max().unwrap_or(0);
            let own = counts.get(labels[i].as_str()).copied().unwrap_or(0);
            let mut leaders = counts.iter().filter(|(_, &c)| c == max);
            match (leaders.next(), leaders.next()) {
                (Some((l, _)), None) if own < max => (*l).to_owned(),
                _ => labels[i].clone(),
            }
        })
        .collect()
}

/// Merges runs of equal labels. A run spans its first window's start to its
/// last window's end, clipped at the next run's start.
pub fn merge_segments(windows: &[EmbeddingWindow], labels: &[String], scores: &[f64]) -> Vec<Segment> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut run_len = 0usize;
    for ((w, label), &score) in windows.iter().zip(labels).zip(scores) {
        match segments.last_mut() {
            Some(seg) if seg.label == *label => {
                seg.end_s = w.end_s;
                seg.mean_score += score;
                run_len += 1;
            }
            _ => {
                if let Some(prev) = segments.last_mut() {
                    prev.mean_score /= run_len as f64;
                    prev.end_s = prev.end_s.min(w.start_s);
                }
                segments.push(Segment {
                    label: label.clone(),
                    start_s: w.start_s,
                    end_s: w.end_s,
                    mean_score: score,
                });
                run_len = 1;
            }
        }
    }
    if let Some(last) = segments.last_mut() {
        last.mean_score /= run_len as f64;
    }
    segments
}

pub enum DiarizeInput<'a> {
    Audio(&'a Pcm),
    Windows(Vec<EmbeddingWindow>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiarizeOutput {
    pub segments: Vec<Segment>,
    pub profiles: Vec<SpeakerProfile>,
    pub warnings: Vec<String>,
}

/// Embed (unless windows are given), enroll from `annotations`, classify,
/// smooth and merge. `prior` profiles, e.g. from an enrolled model, are used
/// for labels the annotations do not mention.
pub fn diarize(
    input: DiarizeInput<'_>,
    annotations: &[Annotation],
    prior: &[SpeakerProfile],
    config: &DiarizeConfig,
    embedder: &dyn Embedder,
    cancel: &dyn CancelProbe,
) -> Result<DiarizeOutput, DiarizeError> {
    config.validate()?;
    let windows = match input {
        DiarizeInput::Audio(pcm) => embedder.embed(pcm, config, cancel)?,
        DiarizeInput::Windows(w) => w,
    };
    check_windows(&windows)?;
    let (mut profiles, warnings) = if annotations.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let e = enroll(&windows, annotations)?;
        (e.profiles, e.warnings)
    };
    for p in prior {
        if !profiles.iter().any(|q| q.label == p.label) {
            profiles.push(p.clone());
        }
    }
    if profiles.is_empty() {
        return Err(DiarizeError::NoProfiles);
    }
    if let Some(w) = windows.first() {
        for p in &profiles {
            if p.centroid.len() != w.vec.len() {
                return Err(DiarizeError::Dimension {
                    expected: w.vec.len(),
                    got: p.centroid.len(),
                });
            }
        }
    }
    if cancel.is_cancelled() {
        return Err(DiarizeError::Cancelled);
    }
    profiles.sort_by(|a, b| a.label.cmp(&b.label));
    let labeled = classify(&windows, &profiles, config.threshold);
    let raw: Vec<String> = labeled.iter().map(|l| l.label.clone()).collect();
    let scores: Vec<f64> = labeled.iter().map(|l| l.score).collect();
    let smoothed = smooth(&raw, config.smooth_k);
    let segments = merge_segments(&windows, &smoothed, &scores);
    Ok(DiarizeOutput {
        segments,
        profiles,
        warnings,
    })
}

pub(crate) fn check_windows(windows: &[EmbeddingWindow]) -> Result<(), DiarizeError> {
    let dim = windows.first().map_or(0, |w| w.vec.len());
    for w in windows {
        if !(w.end_s > w.start_s) {
            return Err(DiarizeError::BadWindow(format!("[{}, {}) is empty", w.start_s, w.end_s)));
        }
        if w.vec.len() != dim {
            return Err(DiarizeError::Dimension {
                expected: dim,
                got: w.vec.len(),
            });
        }
        if w.vec.iter().any(|x| !x.is_finite()) {
            return Err(DiarizeError::BadWindow("non-finite component".into()));
        }
    }
    Ok(())
}
