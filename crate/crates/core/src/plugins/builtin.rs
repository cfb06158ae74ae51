use std::collections::BTreeMap;
use std::sync::Arc;

use base64::Engine;

use super::diarize::{
    decode_wav, diarize, enroll, segments_to_json, Annotation, DiarizeConfig, DiarizeError, DiarizeInput,
    EmbeddingWindow, Embedder, EnrollmentDoc, ProfileArtifact, SpectralEmbedder, WindowsDoc, UNKNOWN_LABEL,
};
use super::postcorrect::{CountAccumulator, MicroCer, PagePair, PostCorrectorModel, TrainConfig};
use super::translate::{merge_pairs, stub_translate, Lexicon};
use super::{params_field, Plugin, PluginError, TaskContext, TaskInput};
use crate::domain::{
    read_text_pairs, Execution, InputKind, OutputKind, PluginManifest, TaskKind, TaskSpec,
};

fn task(
    name: &str,
    kind: TaskKind,
    input_kind: InputKind,
    output_kind: OutputKind,
    queue_class: &str,
) -> TaskSpec {
    TaskSpec {
        task_name: name.into(),
        kind,
        input_kind,
        output_kind,
        queue_class: queue_class.into(),
        supports_finetune: true,
        languages: vec!["*".into()],
    }
}

fn manifest(plugin_id: &str, tasks: Vec<TaskSpec>) -> PluginManifest {
    PluginManifest {
        plugin_id: plugin_id.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        execution: Execution::InProcess,
        tasks,
    }
}

fn text_input(bytes: &[u8]) -> Result<&str, PluginError> {
    std::str::from_utf8(bytes).map_err(|e| PluginError::BadInput(format!("input is not UTF-8: {e}")))
}

fn unknown_task(task: &TaskInput<'_>) -> PluginError {
    PluginError::UnknownTask(task.task_name.to_owned())
}

pub fn builtin_plugins() -> Vec<Arc<dyn Plugin>> {
    vec![
        Arc::new(DiarizePlugin::default()),
        Arc::new(PostCorrectPlugin),
        Arc::new(StubTranslatePlugin),
    ]
}

/// OCR post-correction: `correct` applies a model, `train` fits one (on top of
/// the parent artifact when given).
pub struct PostCorrectPlugin;

impl PostCorrectPlugin {
    fn load(artifact: Option<&[u8]>) -> Result<PostCorrectorModel, PluginError> {
        match artifact {
            Some(bytes) => PostCorrectorModel::from_artifact(bytes).map_err(|e| PluginError::BadArtifact(e.to_string())),
            None => PostCorrectorModel::empty(TrainConfig::default()).map_err(|e| PluginError::Failed(e.to_string())),
        }
    }

    fn correct(&self, task: &TaskInput<'_>, ctx: &TaskContext<'_>) -> Result<Vec<u8>, PluginError> {
        let model = Self::load(task.model_artifact)?;
        let text = text_input(task.input)?;
        let lines: Vec<&str> = text.split('\n').collect();
        ctx.log(&format!("correcting {} lines", lines.len()));
        let mut out = Vec::with_capacity(lines.len());
        for line in lines {
            ctx.check_cancel()?;
            out.push(model.decode(line));
        }
        Ok(out.join("\n").into_bytes())
    }

    fn train(&self, task: &TaskInput<'_>, ctx: &TaskContext<'_>) -> Result<Vec<u8>, PluginError> {
        let parent = task.model_artifact.map(|b| Self::load(Some(b))).transpose()?;
        let config = match task.params.get("config") {
            Some(v) if !v.is_null() => params_field::<TrainConfig>(task.params, "config")?,
            _ => parent.as_ref().map_or_else(TrainConfig::default, |p| *p.config()),
        };
        let pairs: Vec<PagePair> = read_text_pairs(task.input)
            .map_err(|e| PluginError::BadInput(e.to_string()))?
            .into_iter()
            .map(|p| PagePair::new(p.source, p.target))
            .collect();
        let mut acc = match &parent {
            Some(p) => {
                ctx.log("starting from parent model counts");
                CountAccumulator::from_model(p, &config)
            }
            None => CountAccumulator::new(&config),
        };
        for (i, pair) in pairs.iter().enumerate() {
            ctx.check_cancel()?;
            acc.add_pair(pair);
            ctx.log(&format!("aligned page {}/{}", i + 1, pairs.len()));
        }
        let model = acc.finish(config).map_err(|e| PluginError::Failed(e.to_string()))?;
        let inv = model.inventory();
        ctx.log(&format!(
            "inventory: {} substitution sources, {} skippable, {} insertable",
            inv.substitutions.len(),
            inv.skips.len(),
            inv.insertions.len()
        ));
        let mut before = MicroCer::default();
        let mut after = MicroCer::default();
        for pair in &pairs {
            for (obs, truth) in pair.aligned_lines() {
                ctx.check_cancel()?;
                before.add(obs, truth);
                after.add(&model.decode(obs), truth);
            }
        }
        if let (Ok(b), Ok(a)) = (before.value(), after.value()) {
            ctx.log(&format!("training pages: {}, CER before {b:.4}, after {a:.4}", pairs.len()));
        }
        Ok(model.to_artifact())
    }
}

impl Plugin for PostCorrectPlugin {
    fn manifest(&self) -> PluginManifest {
        manifest(
            "postcorrect",
            vec![
                task("correct", TaskKind::Predict, InputKind::TextLines, OutputKind::TextLines, "cpu-light"),
                task("train", TaskKind::Train, InputKind::TextPairs, OutputKind::ModelArtifact, "cpu-heavy"),
            ],
        )
    }

    fn run(&self, task: &TaskInput<'_>, ctx: &TaskContext<'_>) -> Result<Vec<u8>, PluginError> {
        match (task.kind, task.task_name) {
            (TaskKind::Predict, "correct") => self.correct(task, ctx),
            (TaskKind::Train, "train") => self.train(task, ctx),
            _ => Err(unknown_task(task)),
        }
    }
}

/// Enrollment-based diarization: `enroll` stores speaker profiles, `diarize`
/// labels a recording with them (plus any inline annotations).
pub struct DiarizePlugin {
    embedder: Box<dyn Embedder + Send + Sync>,
}

impl Default for DiarizePlugin {
    fn default() -> Self {
        Self {
            embedder: Box::new(SpectralEmbedder),
        }
    }
}

enum Source {
    Audio(Vec<u8>),
    Windows(Vec<EmbeddingWindow>),
}

fn diarize_err(e: DiarizeError) -> PluginError {
    match e {
        DiarizeError::Cancelled => PluginError::Cancelled,
        e => PluginError::BadInput(e.to_string()),
    }
}

impl DiarizePlugin {
    pub fn with_embedder(embedder: Box<dyn Embedder + Send + Sync>) -> Self {
        Self { embedder }
    }

    /// Accepts WAV bytes, a windows document, or an enrollment document.
    fn parse_input(bytes: &[u8]) -> Result<(Source, Vec<Annotation>), PluginError> {
        if bytes.starts_with(b"RIFF") {
            return Ok((Source::Audio(bytes.to_vec()), Vec::new()));
        }
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| PluginError::BadInput(format!("expected WAV or JSON: {e}")))?;
        if value.get("annotations").is_some() {
            let doc = EnrollmentDoc::parse(bytes).map_err(diarize_err)?;
            let source = match (doc.audio_b64, doc.windows) {
                (Some(b64), _) => Source::Audio(
                    base64::engine::general_purpose::STANDARD
                        .decode(b64.trim())
                        .map_err(|e| PluginError::BadInput(format!("audio_b64: {e}")))?,
                ),
                (None, Some(w)) => Source::Windows(w.into_windows().map_err(diarize_err)?),
                (None, None) => unreachable!("checked by EnrollmentDoc::parse"),
            };
            Ok((source, doc.annotations))
        } else {
            Ok((Source::Windows(WindowsDoc::parse(bytes).map_err(diarize_err)?), Vec::new()))
        }
    }

    fn profiles(artifact: Option<&[u8]>) -> Result<Vec<super::diarize::SpeakerProfile>, PluginError> {
        match artifact {
            Some(b) => Ok(ProfileArtifact::from_bytes(b)
                .map_err(|e| PluginError::BadArtifact(e.to_string()))?
                .profiles),
            None => Ok(Vec::new()),
        }
    }

    fn windows(
        &self,
        source: Source,
        config: &DiarizeConfig,
        ctx: &TaskContext<'_>,
    ) -> Result<Vec<EmbeddingWindow>, PluginError> {
        match source {
            Source::Windows(w) => Ok(w),
            Source::Audio(bytes) => {
                let pcm = decode_wav(&bytes).map_err(diarize_err)?;
                ctx.log(&format!("audio: {:.2}s at {} Hz", pcm.duration_s(), pcm.sample_rate));
                self.embedder.embed(&pcm, config, ctx.cancel).map_err(diarize_err)
            }
        }
    }

    fn predict(&self, task: &TaskInput<'_>, ctx: &TaskContext<'_>) -> Result<Vec<u8>, PluginError> {
        let config: DiarizeConfig = params_field(task.params, "config")?;
        let extra: Vec<Annotation> = params_field(task.params, "annotations")?;
        let (source, mut annotations) = Self::parse_input(task.input)?;
        annotations.extend(extra);
        let prior = Self::profiles(task.model_artifact)?;
        let windows = self.windows(source, &config, ctx)?;
        ctx.log(&format!("{} windows, {} enrolled speakers", windows.len(), prior.len()));
        let out = diarize(
            DiarizeInput::Windows(windows),
            &annotations,
            &prior,
            &config,
            self.embedder.as_ref(),
            ctx.cancel,
        )
        .map_err(diarize_err)?;
        for w in &out.warnings {
            ctx.log(&format!("warning: {w}"));
        }
        if out.segments.iter().any(|s| s.label == UNKNOWN_LABEL) {
            ctx.log(&format!(
                "note: {UNKNOWN_LABEL:?} marks windows below similarity {} to every enrolled speaker",
                config.threshold
            ));
        }
        ctx.log(&format!("{} segments", out.segments.len()));
        Ok(serde_json::to_vec(&segments_to_json(&out.segments)).expect("segments serialize"))
    }

    fn enroll(&self, task: &TaskInput<'_>, ctx: &TaskContext<'_>) -> Result<Vec<u8>, PluginError> {
        let config: DiarizeConfig = params_field(task.params, "config")?;
        config.validate().map_err(|e| PluginError::BadParams(e.to_string()))?;
        let doc = EnrollmentDoc::parse(task.input).map_err(diarize_err)?;
        let (source, annotations) = Self::parse_input(task.input)?;
        debug_assert_eq!(annotations.len(), doc.annotations.len());
        let windows = self.windows(source, &config, ctx)?;
        let enrollment = enroll(&windows, &annotations).map_err(diarize_err)?;
        for w in &enrollment.warnings {
            ctx.log(&format!("warning: {w}"));
        }
        let mut merged: BTreeMap<String, super::diarize::SpeakerProfile> = Self::profiles(task.model_artifact)?
            .into_iter()
            .map(|p| (p.label.clone(), p))
            .collect();
        for p in enrollment.profiles {
            ctx.log(&format!("enrolled {:?} on {:.2}s", p.label, p.support_s));
            merged.insert(p.label.clone(), p);
        }
        Ok(ProfileArtifact::new(merged.into_values().collect()).to_bytes())
    }
}

impl Plugin for DiarizePlugin {
    fn manifest(&self) -> PluginManifest {
        manifest(
            "diarize",
            vec![
                task("diarize", TaskKind::Predict, InputKind::WavAudio, OutputKind::Segments, "cpu-light"),
                task(
                    "enroll",
                    TaskKind::Train,
                    InputKind::EnrollmentAnnotations,
                    OutputKind::ModelArtifact,
                    "cpu-light",
                ),
            ],
        )
    }

    fn run(&self, task: &TaskInput<'_>, ctx: &TaskContext<'_>) -> Result<Vec<u8>, PluginError> {
        match (task.kind, task.task_name) {
            (TaskKind::Predict, "diarize") => self.predict(task, ctx),
            (TaskKind::Train, "enroll") => self.enroll(task, ctx),
            _ => Err(unknown_task(task)),
        }
    }
}

/// Lexicon substitution: `translate` applies a lexicon, `train` merges word
/// pairs into it.
pub struct StubTranslatePlugin;

impl StubTranslatePlugin {
    fn lexicon(artifact: Option<&[u8]>) -> Result<BTreeMap<String, String>, PluginError> {
        match artifact {
            Some(b) => Ok(Lexicon::from_bytes(b).map_err(PluginError::BadArtifact)?.entries),
            None => Ok(BTreeMap::new()),
        }
    }
}

impl Plugin for StubTranslatePlugin {
    fn manifest(&self) -> PluginManifest {
        manifest(
            "stub-translate",
            vec![
                task("translate", TaskKind::Predict, InputKind::TextLines, OutputKind::TextLines, "cpu-light"),
                task("train", TaskKind::Train, InputKind::TextPairs, OutputKind::ModelArtifact, "cpu-light"),
            ],
        )
    }

    fn run(&self, task: &TaskInput<'_>, ctx: &TaskContext<'_>) -> Result<Vec<u8>, PluginError> {
        let mut lexicon = Self::lexicon(task.model_artifact)?;
        match (task.kind, task.task_name) {
            (TaskKind::Predict, "translate") => {
                let text = text_input(task.input)?;
                ctx.log(&format!("lexicon of {} entries", lexicon.len()));
                Ok(stub_translate(text, &lexicon).into_bytes())
            }
            (TaskKind::Train, "train") => {
                let pairs = read_text_pairs(task.input).map_err(|e| PluginError::BadInput(e.to_string()))?;
                let before = lexicon.len();
                merge_pairs(&mut lexicon, pairs.iter().map(|p| (p.source.as_str(), p.target.as_str())));
                ctx.log(&format!("merged {} pairs; lexicon {} -> {} entries", pairs.len(), before, lexicon.len()));
                Ok(Lexicon::new(lexicon).to_bytes())
            }
            _ => Err(unknown_task(task)),
        }
    }
}
