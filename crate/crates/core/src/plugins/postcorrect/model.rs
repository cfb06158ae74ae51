use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::align::align;
use super::cer::{CerError, MicroCer};
use super::channel::{ChannelModel, Sym};
use super::lm::{CharLm, Ctx, Next};

pub const ARTIFACT_FORMAT: &str = "annolab.postcorrect.v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Channel smoothing.
    pub alpha: f64,
    pub lm_alpha: f64,
    /// Minimum training count for an edit to enter the candidate inventory.
    pub min_count: u64,
    pub beam: usize,
    pub lm_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lm_alpha: 0.1,
            min_count: 2,
            beam: 16,
            lm_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArtifactError {
    #[error("artifact is not valid JSON: {0}")]
    Json(String),
    #[error("unsupported artifact format {0:?}")]
    Format(String),
    #[error("artifact symbol {0:?} is not a single character")]
    Symbol(String),
}

/// First-pass OCR page and its hand-corrected counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PagePair {
    pub source: String,
    pub target: String,
}

impl PagePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }

    /// Line pairs used for channel estimation; falls back to the whole page
    /// when line counts disagree.
    pub fn aligned_lines(&self) -> Vec<(&str, &str)> {
        let obs: Vec<&str> = self.source.split('\n').collect();
        let truth: Vec<&str> = self.target.split('\n').collect();
        if obs.len() == truth.len() {
            obs.into_iter().zip(truth).collect()
        } else {
            vec![(self.source.as_str(), self.target.as_str())]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub pages_used: usize,
    pub cer_before: f64,
    pub cer_after: f64,
}

/// Edits the decoder may propose, restricted to those seen at least
/// `min_count` times in training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inventory {
    /// observed char -> true chars it may be corrected to
    pub substitutions: BTreeMap<char, Vec<char>>,
    /// observed chars that may be dropped as spurious
    pub skips: BTreeSet<char>,
    /// true chars that may be restored where the OCR lost them
    pub insertions: Vec<char>,
}

impl Inventory {
    fn build(channel: &ChannelModel, min_count: u64) -> Self {
        let mut inv = Inventory::default();
        let mut insertions = BTreeSet::new();
        for ((t, o), n) in channel.sorted_counts() {
            if n < min_count {
                continue;
            }
            match (t, o) {
                (Some(t), Some(o)) if t != o => inv.substitutions.entry(o).or_default().push(t),
                (None, Some(o)) => {
                    inv.skips.insert(o);
                }
                (Some(t), None) => {
                    insertions.insert(t);
                }
                _ => {}
            }
        }
        inv.insertions = insertions.into_iter().collect();
        inv
    }

    pub fn is_empty(&self) -> bool {
        self.substitutions.is_empty() && self.skips.is_empty() && self.insertions.is_empty()
    }
}

/// Noisy-channel post-corrector: character channel + character trigram LM +
/// edit inventory. Read-only after training, so it can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct PostCorrectorModel {
    pub(crate) channel: ChannelModel,
    pub(crate) lm: CharLm,
    pub(crate) inventory: Inventory,
    pub(crate) config: TrainConfig,
}

/// Collects alignment and LM counts pair by pair so callers can interleave
/// cancellation checks.
#[derive(Debug, Clone)]
pub struct CountAccumulator {
    channel: ChannelModel,
    lm: CharLm,
    pages: usize,
}

impl CountAccumulator {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            channel: ChannelModel::new(config.alpha),
            lm: CharLm::new(config.lm_alpha),
            pages: 0,
        }
    }

    /// Starts from an existing model's counts. Counts are additive, so this
    /// equals retraining on the parent's data plus whatever is added next.
    pub fn from_model(model: &PostCorrectorModel, config: &TrainConfig) -> Self {
        let mut acc = Self::new(config);
        for c in model.channel.alphabet() {
            acc.channel.add_symbol(*c);
        }
        for ((t, o), n) in model.channel.sorted_counts() {
            acc.channel.add_count(t, o, n);
        }
        for ((h1, h2, next), n) in model.lm.sorted_counts() {
            acc.lm.add_count((h1, h2), next, n);
        }
        acc
    }

    pub fn add_pair(&mut self, pair: &PagePair) {
        for (obs, truth) in pair.aligned_lines() {
            obs.chars().chain(truth.chars()).for_each(|c| self.channel.add_symbol(c));
            for op in align(obs, truth) {
                self.channel.observe(op);
            }
        }
        for line in pair.target.split('\n') {
            self.lm.observe_line(line);
        }
        self.pages += 1;
    }

    pub fn pages(&self) -> usize {
        self.pages
    }

    pub fn finish(self, config: TrainConfig) -> Result<PostCorrectorModel, TrainError> {
        validate_config(&config)?;
        let inventory = Inventory::build(&self.channel, config.min_count);
        Ok(PostCorrectorModel {
            channel: self.channel,
            lm: self.lm,
            inventory,
            config,
        })
    }
}

fn validate_config(config: &TrainConfig) -> Result<(), TrainError> {
    if !(config.alpha > 0.0 && config.alpha.is_finite()) {
        return Err(TrainError::BadConfig("alpha must be positive"));
    }
    if !(config.lm_alpha > 0.0 && config.lm_alpha.is_finite()) {
        return Err(TrainError::BadConfig("lm_alpha must be positive"));
    }
    if config.beam == 0 {
        return Err(TrainError::BadConfig("beam must be at least 1"));
    }
    if !(config.lm_weight >= 0.0 && config.lm_weight.is_finite()) {
        return Err(TrainError::BadConfig("lm_weight must be nonnegative"));
    }
    Ok(())
}

/// Trains a fresh model and scores it on its own training pages.
pub fn train(pairs: &[PagePair], config: TrainConfig) -> Result<(PostCorrectorModel, TrainReport), TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut acc = CountAccumulator::new(&config);
    for p in pairs {
        acc.add_pair(p);
    }
    let model = acc.finish(config)?;
    let eval = evaluate(&model, pairs).unwrap_or(Evaluation {
        cer_before: 0.0,
        cer_after: 0.0,
    });
    let report = TrainReport {
        pages_used: pairs.len(),
        cer_before: eval.cer_before,
        cer_after: eval.cer_after,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub cer_before: f64,
    pub cer_after: f64,
}

/// Micro-averaged CER of the raw OCR text and of its correction.
pub fn evaluate(model: &PostCorrectorModel, pairs: &[PagePair]) -> Result<Evaluation, CerError> {
    let mut before = MicroCer::default();
    let mut after = MicroCer::default();
    for p in pairs {
        before.add(&p.source, &p.target);
        after.add(&model.correct_page(&p.source), &p.target);
    }
    Ok(Evaluation {
        cer_before: before.value()?,
        cer_after: after.value()?,
    })
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    format: String,
    config: TrainConfig,
    alphabet: Vec<String>,
    lm_vocabulary: Vec<String>,
    /// `[true, observed, count]`, null = ε
    channel: Vec<(Option<String>, Option<String>, u64)>,
    /// `[h1, h2, next, count]`, null = sentinel
    lm: Vec<(Option<String>, Option<String>, Option<String>, u64)>,
}

fn sym_out(s: Option<char>) -> Option<String> {
    s.map(String::from)
}

fn sym_in(s: Option<String>) -> Result<Option<char>, ArtifactError> {
    s.map(|s| {
        let mut it = s.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(ArtifactError::Symbol(s.clone())),
        }
    })
    .transpose()
}

impl PostCorrectorModel {
    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inventory
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn lm(&self) -> &CharLm {
        &self.lm
    }

    /// An untrained model: empty inventory, so decoding is the identity.
    pub fn empty(config: TrainConfig) -> Result<Self, TrainError> {
        CountAccumulator::new(&config).finish(config)
    }

    /// Same counts, different decoding or inventory parameters.
    pub fn with_config(&self, config: TrainConfig) -> Result<Self, TrainError> {
        let mut acc = CountAccumulator::from_model(self, &config);
        acc.pages = 0;
        acc.finish(config)
    }

    /// Self-describing JSON document; byte-identical for identical counts.
    pub fn to_artifact(&self) -> Vec<u8> {
        let art = Artifact {
            format: ARTIFACT_FORMAT.to_owned(),
            config: self.config,
            alphabet: self.channel.alphabet().iter().map(|c| c.to_string()).collect(),
            lm_vocabulary: self.lm.vocab().iter().map(|c| c.to_string()).collect(),
            channel: self
                .channel
                .sorted_counts()
                .into_iter()
                .map(|((t, o), n)| (sym_out(t), sym_out(o), n))
                .collect(),
            lm: self
                .lm
                .sorted_counts()
                .into_iter()
                .map(|((h1, h2, nx), n)| (sym_out(h1), sym_out(h2), sym_out(nx), n))
                .collect(),
        };
        serde_json::to_vec(&art).expect("artifact serializes")
    }

    pub fn from_artifact(bytes: &[u8]) -> Result<Self, ArtifactError> {
        let art: Artifact = serde_json::from_slice(bytes).map_err(|e| ArtifactError::Json(e.to_string()))?;
        if art.format != ARTIFACT_FORMAT {
            return Err(ArtifactError::Format(art.format));
        }
        let mut channel = ChannelModel::new(art.config.alpha);
        for s in art.alphabet {
            if let Some(c) = sym_in(Some(s))? {
                channel.add_symbol(c);
            }
        }
        for (t, o, n) in art.channel {
            channel.add_count(sym_in(t)?, sym_in(o)?, n);
        }
        let mut lm = CharLm::new(art.config.lm_alpha);
        for (h1, h2, nx, n) in art.lm {
            let ctx: (Ctx, Ctx) = (sym_in(h1)?, sym_in(h2)?);
            let next: Next = sym_in(nx)?;
            lm.add_count(ctx, next, n);
        }
        let inventory = Inventory::build(&channel, art.config.min_count);
        Ok(Self {
            channel,
            lm,
            inventory,
            config: art.config,
        })
    }

    /// Symbols the channel rows range over, ε first.
    pub fn channel_outcomes(&self) -> Vec<Sym> {
        std::iter::once(None)
            .chain(self.channel.alphabet().iter().copied().map(Some))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(raw: &[(&str, &str)]) -> Vec<PagePair> {
        raw.iter().map(|(s, t)| PagePair::new(*s, *t)).collect()
    }

    #[test]
    fn error_free_training_has_empty_inventory() {
        let (model, report) = train(&pairs(&[("abc\nba", "abc\nba"), ("cab", "cab")]), TrainConfig::default()).unwrap();
        assert!(model.inventory().is_empty());
        assert_eq!(report.cer_before, 0.0);
        assert_eq!(report.cer_after, 0.0);
        assert_eq!(report.pages_used, 2);
    }

    #[test]
    fn substitution_enters_inventory_at_threshold() {
        let data = pairs(&[("cb", "ab"), ("cd", "ad"), ("bc", "ba")]);
        let (model, _) = train(&data, TrainConfig::default()).unwrap();
        assert_eq!(model.channel().count(Some('a'), Some('c')), 3);
        assert_eq!(model.inventory().substitutions.get(&'c'), Some(&vec!['a']));

        let (model, _) = train(&data[..1], TrainConfig::default()).unwrap();
        assert!(model.inventory().substitutions.is_empty());
    }

    #[test]
    fn hand_computed_channel_probability() {
        let (model, _) = train(&pairs(&[("cb", "ab"), ("ab", "ab")]), TrainConfig::default()).unwrap();
        let p = model.channel().prob(Some('a'), Some('c'));
        assert!((p - 1.1 / 2.4).abs() < 1e-4, "{p}");
    }

    #[test]
    fn empty_dataset_rejected() {
        assert_eq!(train(&[], TrainConfig::default()).unwrap_err(), TrainError::EmptyDataset);
    }

    #[test]
    fn mismatched_line_counts_align_whole_page() {
        let p = PagePair::new("ab\ncd", "abcd");
        assert_eq!(p.aligned_lines(), vec![("ab\ncd", "abcd")]);
        let p = PagePair::new("ab\ncd", "ab\nce");
        assert_eq!(p.aligned_lines().len(), 2);
    }

    #[test]
    fn artifact_round_trip() {
        let data = pairs(&[("cb\nxé", "ab\nxe"), ("cb", "ab"), ("ëe", "e")]);
        let (model, _) = train(&data, TrainConfig::default()).unwrap();
        let bytes = model.to_artifact();
        let back = PostCorrectorModel::from_artifact(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_artifact(), bytes);
    }

    #[test]
    fn accumulating_on_parent_equals_training_on_union() {
        let first = pairs(&[("cb", "ab"), ("cd", "ad")]);
        let second = pairs(&[("xcb", "ab"), ("ab", "ab")]);
        let cfg = TrainConfig::default();
        let (parent, _) = train(&first, cfg).unwrap();
        let mut acc = CountAccumulator::from_model(&parent, &cfg);
        second.iter().for_each(|p| acc.add_pair(p));
        let child = acc.finish(cfg).unwrap();
        let union: Vec<PagePair> = first.iter().chain(&second).cloned().collect();
        let (direct, _) = train(&union, cfg).unwrap();
        assert_eq!(child, direct);
    }

    #[test]
    fn bad_artifact_rejected() {
        assert!(matches!(PostCorrectorModel::from_artifact(b"{}"), Err(ArtifactError::Json(_))));
        let mut v: serde_json::Value = serde_json::from_slice(&PostCorrectorModel::empty(TrainConfig::default()).unwrap().to_artifact()).unwrap();
        v["format"] = "other".into();
        assert!(matches!(
            PostCorrectorModel::from_artifact(v.to_string().as_bytes()),
            Err(ArtifactError::Format(_))
        ));
    }
}
