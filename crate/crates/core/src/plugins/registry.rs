use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use super::{builtin_plugins, Plugin};
use crate::domain::{validate_manifest, Execution, PluginManifest, MANIFEST_FILE_NAME};

#[derive(Clone)]
pub enum Executor {
    Builtin(Arc<dyn Plugin>),
    External { url: String },
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Executor::Builtin(_) => f.write_str("Builtin"),
            Executor::External { url } => f.debug_struct("External").field("url", url).finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub manifest: PluginManifest,
    pub executor: Executor,
}

/// Validated plugins by id. Read-only once built.
#[derive(Debug, Clone)]
pub struct PluginRegistry {
    entries: BTreeMap<String, RegistryEntry>,
    warnings: Vec<String>,
}

impl PluginRegistry {
    /// Only the built-in plugins.
    pub fn builtin() -> Self {
        let entries = builtin_plugins()
            .into_iter()
            .map(|p| {
                let manifest = p.manifest();
                (
                    manifest.plugin_id.clone(),
                    RegistryEntry {
                        manifest,
                        executor: Executor::Builtin(p),
                    },
                )
            })
            .collect();
        Self {
            entries,
            warnings: Vec::new(),
        }
    }

    /// Built-ins plus every valid `plugin.manifest.json` in the immediate
    /// subdirectories of `dir`. Invalid or conflicting manifests are skipped
    /// and reported through [`PluginRegistry::warnings`].
    pub fn discover(dir: &Path) -> std::io::Result<Self> {
        let mut reg = Self::builtin();
        let mut subdirs: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            let path = sub.join(MANIFEST_FILE_NAME);
            if !path.is_file() {
                continue;
            }
            let raw = match std::fs::read_to_string(&path) {
                Ok(raw) => raw,
                Err(e) => {
                    reg.warn(format!("{}: unreadable: {e}", path.display()));
                    continue;
                }
            };
            let manifest = match validate_manifest(&raw) {
                Ok(m) => m,
                Err(e) => {
                    reg.warn(format!("{}: invalid manifest: {e}", path.display()));
                    continue;
                }
            };
            if reg.entries.contains_key(&manifest.plugin_id) {
                reg.warn(format!(
                    "{}: plugin id {:?} is already registered; skipped",
                    path.display(),
                    manifest.plugin_id
                ));
                continue;
            }
            let url = match &manifest.execution {
                Execution::External { url } => url.clone(),
                Execution::InProcess => {
                    reg.warn(format!(
                        "{}: in_process execution is only available to built-in plugins; skipped",
                        path.display()
                    ));
                    continue;
                }
            };
            reg.entries.insert(
                manifest.plugin_id.clone(),
                RegistryEntry {
                    manifest,
                    executor: Executor::External { url },
                },
            );
        }
        Ok(reg)
    }

    fn warn(&mut self, msg: String) {
        tracing::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn get(&self, plugin_id: &str) -> Option<&RegistryEntry> {
        self.entries.get(plugin_id)
    }

    pub fn manifests(&self) -> impl Iterator<Item = &PluginManifest> {
        self.entries.values().map(|e| &e.manifest)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}
