//! Plugin interface, the built-in plugins and the registry that hosts them.

pub mod diarize;
pub mod postcorrect;

mod builtin;
mod registry;
mod translate;

pub use builtin::{builtin_plugins, DiarizePlugin, PostCorrectPlugin, StubTranslatePlugin};
pub use registry::{Executor, PluginRegistry, RegistryEntry};
pub use translate::{merge_pairs, stub_translate, Lexicon, LEXICON_ARTIFACT_FORMAT};

use parking_lot::Mutex;
use thiserror::Error;

use crate::domain::{PluginManifest, TaskKind};

/// Polled by long-running plugin code; true once the job should stop.
pub trait CancelProbe: Send + Sync {
    fn is_cancelled(&self) -> bool;
}

pub struct NeverCancel;

impl CancelProbe for NeverCancel {
    fn is_cancelled(&self) -> bool {
        false
    }
}

impl CancelProbe for std::sync::atomic::AtomicBool {
    fn is_cancelled(&self) -> bool {
        self.load(std::sync::atomic::Ordering::SeqCst)
    }
}

/// Receives plugin diagnostics in order.
pub trait LogSink: Send + Sync {
    fn write(&self, text: &str);
}

/// Collects log text in memory.
#[derive(Default)]
pub struct MemoryLog(Mutex<String>);

impl MemoryLog {
    pub fn contents(&self) -> String {
        self.0.lock().clone()
    }
}

impl LogSink for MemoryLog {
    fn write(&self, text: &str) {
        self.0.lock().push_str(text);
    }
}

pub struct TaskContext<'a> {
    pub cancel: &'a dyn CancelProbe,
    pub log: &'a dyn LogSink,
}

impl TaskContext<'_> {
    pub fn log(&self, line: &str) {
        self.log.write(line);
        self.log.write("\n");
    }

    pub fn check_cancel(&self) -> Result<(), PluginError> {
        if self.cancel.is_cancelled() {
            Err(PluginError::Cancelled)
        } else {
            Ok(())
        }
    }
}

/// Everything a plugin gets for one task run.
#[derive(Debug, Clone, Copy)]
pub struct TaskInput<'a> {
    pub kind: TaskKind,
    pub task_name: &'a str,
    pub input: &'a [u8],
    pub model_artifact: Option<&'a [u8]>,
    pub params: &'a serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PluginError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("bad model artifact: {0}")]
    BadArtifact(String),
    #[error("bad params: {0}")]
    BadParams(String),
    #[error("{0}")]
    Failed(String),
    #[error("cancelled")]
    Cancelled,
}

/// An in-process plugin. Implementations must be callable concurrently on
/// distinct jobs.
pub trait Plugin: Send + Sync {
    fn manifest(&self) -> PluginManifest;
    fn run(&self, task: &TaskInput<'_>, ctx: &TaskContext<'_>) -> Result<Vec<u8>, PluginError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutionOutcome {
    Ok(Vec<u8>),
    Err(String),
    Cancelled,
}

impl ExecutionOutcome {
    pub fn name(&self) -> &'static str {
        match self {
            ExecutionOutcome::Ok(_) => "ok",
            ExecutionOutcome::Err(_) => "err",
            ExecutionOutcome::Cancelled => "cancelled",
        }
    }
}

/// Runs `task` on an in-process plugin, turning every failure into an outcome.
pub fn run_plugin(plugin: &dyn Plugin, task: &TaskInput<'_>, ctx: &TaskContext<'_>) -> ExecutionOutcome {
    let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| plugin.run(task, ctx)));
    match run {
        Ok(Ok(bytes)) => {
            if ctx.cancel.is_cancelled() {
                ExecutionOutcome::Cancelled
            } else {
                ExecutionOutcome::Ok(bytes)
            }
        }
        Ok(Err(PluginError::Cancelled)) => {
            ctx.log("cancelled");
            ExecutionOutcome::Cancelled
        }
        Ok(Err(e)) => {
            ctx.log(&format!("error: {e}"));
            ExecutionOutcome::Err(e.to_string())
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "plugin panicked".into());
            ctx.log(&format!("panic: {msg}"));
            ExecutionOutcome::Err(format!("plugin panicked: {msg}"))
        }
    }
}

/// Reads a typed config from `params[key]`, falling back to defaults for
/// missing fields.
pub(crate) fn params_field<T: serde::de::DeserializeOwned + Default>(
    params: &serde_json::Value,
    key: &str,
) -> Result<T, PluginError> {
    match params.get(key) {
        None | Some(serde_json::Value::Null) => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| PluginError::BadParams(format!("{key}: {e}"))),
    }
}

/// Validates an uploaded dataset and returns its record count.
pub fn count_dataset_items(
    format: crate::domain::DatasetFormat,
    bytes: &[u8],
) -> Result<u64, crate::domain::DatasetError> {
    use crate::domain::{read_text_pairs, DatasetError, DatasetFormat};
    match format {
        DatasetFormat::TextPairsJsonl => Ok(read_text_pairs(bytes)?.len() as u64),
        DatasetFormat::EnrollmentJson => {
            let doc = diarize::EnrollmentDoc::parse(bytes).map_err(document_error)?;
            if let Some(w) = doc.windows {
                w.into_windows().map_err(document_error)?;
            }
            Ok(doc.annotations.len() as u64)
        }
        DatasetFormat::EmbeddingWindowsJson => {
            let windows = diarize::WindowsDoc::parse(bytes).map_err(document_error)?;
            if windows.is_empty() {
                return Err(DatasetError::Empty);
            }
            Ok(windows.len() as u64)
        }
    }
}

fn document_error(e: diarize::DiarizeError) -> crate::domain::DatasetError {
    match e {
        diarize::DiarizeError::Format(m) => crate::domain::DatasetError::Document(m),
        other => crate::domain::DatasetError::Document(other.to_string()),
    }
}
