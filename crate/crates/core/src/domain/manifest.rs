use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE_NAME: &str = "plugin.manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginManifest {
    pub plugin_id: String,
    pub version: String,
    pub execution: Execution,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    InProcess,
    External { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_name: String,
    pub kind: TaskKind,
    pub input_kind: InputKind,
    pub output_kind: OutputKind,
    pub queue_class: String,
    pub supports_finetune: bool,
    pub languages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Predict,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    TextLines,
    TextPairs,
    WavAudio,
    EmbeddingWindows,
    EnrollmentAnnotations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    TextLines,
    Segments,
    ModelArtifact,
}

impl PluginManifest {
    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_name == name)
    }

    /// The training task that consumes `input`, if the plugin has one.
    pub fn train_task_for(&self, input: InputKind) -> Option<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.kind == TaskKind::Train && t.input_kind == input)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("manifest is not valid JSON for the manifest schema: {0}")]
    Malformed(String),
    #[error("malformed plugin_id {0:?}: expected [a-z0-9_-]+")]
    BadPluginId(String),
    #[error("version {0:?} is not a semver string")]
    BadVersion(String),
    #[error("external execution requires an absolute http(s) URL, got {0:?}")]
    BadUrl(String),
    #[error("empty task list")]
    NoTasks,
    #[error("task with empty name")]
    EmptyTaskName,
    #[error("duplicate task name {0:?}")]
    DuplicateTask(String),
    #[error("task {task:?}: {rule}")]
    BadTask { task: String, rule: &'static str },
    #[error("task {task:?}: invalid language code {code:?}")]
    BadLanguage { task: String, code: String },
}

/// Parses and validates one `plugin.manifest.json` document, reporting the
/// first rule the document violates.
pub fn validate_manifest(raw: &str) -> Result<PluginManifest, ManifestError> {
    let manifest: PluginManifest =
        serde_json::from_str(raw).map_err(|e| ManifestError::Malformed(e.to_string()))?;
    check_manifest(&manifest)?;
    Ok(manifest)
}

pub(crate) fn check_manifest(m: &PluginManifest) -> Result<(), ManifestError> {
    let id_ok = !m.plugin_id.is_empty()
        && m.plugin_id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-');
    if !id_ok {
        return Err(ManifestError::BadPluginId(m.plugin_id.clone()));
    }
    if semver::Version::parse(&m.version).is_err() {
        return Err(ManifestError::BadVersion(m.version.clone()));
    }
    if let Execution::External { url } = &m.execution {
        if !is_absolute_http_url(url) {
            return Err(ManifestError::BadUrl(url.clone()));
        }
    }
    if m.tasks.is_empty() {
        return Err(ManifestError::NoTasks);
    }
    let mut seen = HashSet::new();
    for task in &m.tasks {
        if task.task_name.is_empty() {
            return Err(ManifestError::EmptyTaskName);
        }
        if !seen.insert(task.task_name.as_str()) {
            return Err(ManifestError::DuplicateTask(task.task_name.clone()));
        }
        check_task(task)?;
    }
    Ok(())
}

fn check_task(task: &TaskSpec) -> Result<(), ManifestError> {
    let bad = |rule| ManifestError::BadTask {
        task: task.task_name.clone(),
        rule,
    };
    match task.kind {
        TaskKind::Train if task.output_kind != OutputKind::ModelArtifact => {
            return Err(bad("train tasks must output model_artifact"))
        }
        TaskKind::Predict if task.output_kind == OutputKind::ModelArtifact => {
            return Err(bad("predict tasks cannot output model_artifact"))
        }
        _ => {}
    }
    if task.queue_class.trim().is_empty() {
        return Err(bad("queue_class must be nonempty"));
    }
    if task.languages.is_empty() {
        return Err(bad("languages must be nonempty"));
    }
    if let Some(code) = task.languages.iter().find(|c| !is_language_code(c)) {
        return Err(ManifestError::BadLanguage {
            task: task.task_name.clone(),
            code: code.clone(),
        });
    }
    Ok(())
}

fn is_absolute_http_url(raw: &str) -> bool {
    match url::Url::parse(raw) {
        Ok(u) => matches!(u.scheme(), "http" | "https") && u.host_str().is_some_and(|h| !h.is_empty()),
        Err(_) => false,
    }
}

/// `*`, an ISO-639-1/3 code, optionally with a script subtag (`eng_Latn`, `sr-Cyrl`).
fn is_language_code(code: &str) -> bool {
    if code == "*" {
        return true;
    }
    let (lang, script) = match code.find(['_', '-']) {
        Some(i) => (&code[..i], Some(&code[i + 1..])),
        None => (code, None),
    };
    let lang_ok = (2..=3).contains(&lang.len()) && lang.bytes().all(|b| b.is_ascii_lowercase());
    let script_ok = script.is_none_or(|s| {
        s.len() == 4
            && s.as_bytes()[0].is_ascii_uppercase()
            && s.bytes().skip(1).all(|b| b.is_ascii_lowercase())
    });
    lang_ok && script_ok
}
