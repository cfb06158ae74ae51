//! Durable single-node persistence: versioned entity records, content-addressed
//! blobs and append-only job logs under one data directory.
//!
//! Layout:
//! - `records/snapshot.json` + `records/journal.jsonl`: every committed
//!   transaction is one fsynced journal line; the snapshot is a periodic
//!   compaction of the journal.
//! - `blobs/<2 hex>/<sha256 hex>`
//! - `logs/<job id>.log`

mod blobs;
mod logs;
mod records;

pub use logs::LogRead;
pub use records::{EntityKind, ListFilter, Op, OpResult, Record};

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{BlobRef, Job, JobKind, ModelRecord};
use records::RecordState;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("version conflict on {kind} {id}: expected {expected}, found {found}")]
    VersionConflict {
        kind: EntityKind,
        id: String,
        expected: u64,
        found: u64,
    },
    #[error("{kind} {id} not found")]
    NotFound { kind: EntityKind, id: String },
    #[error("blob {0} not found")]
    BlobNotFound(String),
    #[error("blob {0} is corrupted (digest mismatch)")]
    Corrupted(String),
    #[error("blob digest collision on {0}")]
    Collision(String),
    #[error("log offset gap for job {job_id}: expected {expected}, got {got}")]
    LogGap { job_id: String, expected: u64, got: u64 },
    #[error("stored {kind} {id} does not decode: {message}")]
    Decode {
        kind: EntityKind,
        id: String,
        message: String,
    },
    #[error("journal damaged at line {line}: {message}")]
    Journal { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl StoreError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, StoreError::NotFound { .. } | StoreError::BlobNotFound(_))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// fsync journal lines, blobs and the snapshot before acknowledging.
    pub fsync: bool,
    /// Compact the journal into the snapshot once it holds this many lines.
    pub compact_after: usize,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            fsync: true,
            compact_after: 4096,
        }
    }
}

pub struct Store {
    root: PathBuf,
    options: StoreOptions,
    records: RwLock<RecordState>,
    /// Serializes blob writes/deletes against purge sweeps.
    blob_lock: Mutex<()>,
    log_lock: Mutex<()>,
}

/// What a purge removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PurgeReport {
    pub model_id: String,
    pub jobs: Vec<String>,
    pub datasets: Vec<String>,
    pub blobs: Vec<String>,
}

impl PurgeReport {
    /// All deleted ids, prefixed by their kind.
    pub fn deleted_ids(&self) -> Vec<String> {
        let mut out = vec![format!("model:{}", self.model_id)];
        out.extend(self.jobs.iter().map(|j| format!("job:{j}")));
        out.extend(self.datasets.iter().map(|d| format!("dataset:{d}")));
        out.extend(self.blobs.iter().map(|b| format!("blob:{b}")));
        out
    }
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(root, StoreOptions::default())
    }

    pub fn open_with(root: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        for sub in ["records", "blobs", "logs"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        let records = RecordState::open(&root.join("records"), options)?;
        Ok(Self {
            root,
            options,
            records: RwLock::new(records),
            blob_lock: Mutex::new(()),
            log_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Applies `ops` atomically: either every op succeeds and all writes are
    /// durable, or nothing changes.
    pub fn transact(&self, ops: Vec<Op>) -> Result<Vec<OpResult>, StoreError> {
        self.records.write().transact(ops)
    }

    pub fn get(&self, kind: EntityKind, id: &str) -> Result<Record, StoreError> {
        self.records.read().get(kind, id)
    }

    pub fn list(&self, kind: EntityKind, filter: &ListFilter) -> Vec<Record> {
        self.records.read().list(kind, filter)
    }

    pub fn get_as<T: DeserializeOwned>(&self, kind: EntityKind, id: &str) -> Result<(T, u64), StoreError> {
        let rec = self.get(kind, id)?;
        let value = rec.decode()?;
        Ok((value, rec.version))
    }

    pub fn list_as<T: DeserializeOwned>(&self, kind: EntityKind, filter: &ListFilter) -> Result<Vec<T>, StoreError> {
        self.list(kind, filter).iter().map(Record::decode).collect()
    }

    /// Single put; returns the new version.
    pub fn put<T: Serialize>(
        &self,
        kind: EntityKind,
        id: &str,
        expected: Option<u64>,
        value: &T,
    ) -> Result<u64, StoreError> {
        let op = Op::put(kind, id, expected, value);
        match self.transact(vec![op])?.pop() {
            Some(OpResult::Put { version }) => Ok(version),
            other => unreachable!("put returned {other:?}"),
        }
    }

    pub fn delete(&self, kind: EntityKind, id: &str) -> Result<(), StoreError> {
        self.transact(vec![Op::Delete {
            kind,
            id: id.to_owned(),
            expected: None,
        }])
        .map(|_| ())
    }

    pub fn blob_put(&self, bytes: &[u8]) -> Result<BlobRef, StoreError> {
        let _g = self.blob_lock.lock();
        blobs::put(&self.root.join("blobs"), bytes, self.options.fsync)
    }

    pub fn blob_get(&self, blob: &BlobRef) -> Result<Vec<u8>, StoreError> {
        blobs::get(&self.root.join("blobs"), &blob.blob_id)
    }

    pub fn blob_get_id(&self, blob_id: &str) -> Result<Vec<u8>, StoreError> {
        blobs::get(&self.root.join("blobs"), blob_id)
    }

    /// Idempotent.
    pub fn blob_delete(&self, blob: &BlobRef) -> Result<(), StoreError> {
        let _g = self.blob_lock.lock();
        blobs::delete(&self.root.join("blobs"), &blob.blob_id)
    }

    pub fn blob_ids(&self) -> Result<BTreeSet<String>, StoreError> {
        blobs::list(&self.root.join("blobs"))
    }

    /// Appends `payload` at `offset`, which must equal the log's current length.
    /// Returns the new length.
    pub fn append_log(&self, job_id: &str, offset: u64, payload: &[u8]) -> Result<u64, StoreError> {
        self.get(EntityKind::Job, job_id)?;
        let _g = self.log_lock.lock();
        logs::append(&self.root.join("logs"), job_id, offset, payload)
    }

    /// Bytes from `offset` to the current end; `finished` once the job is terminal.
    pub fn read_log(&self, job_id: &str, offset: u64) -> Result<LogRead, StoreError> {
        let (job, _) = self.get_as::<Job>(EntityKind::Job, job_id)?;
        let (payload, next_offset) = logs::read(&self.root.join("logs"), job_id, offset)?;
        Ok(LogRead {
            payload,
            next_offset,
            finished: job.status.is_terminal(),
        })
    }

    pub fn log_len(&self, job_id: &str) -> Result<u64, StoreError> {
        logs::len(&self.root.join("logs"), job_id)
    }

    /// Deletes a model, its artifact, the jobs its owner ran against it
    /// (including the one that trained it) with their logs, and the datasets
    /// no surviving model was trained on. Descendant models are kept.
    pub fn purge_model_cascade(&self, model_id: &str) -> Result<PurgeReport, StoreError> {
        let (report, candidates) = {
            let mut state = self.records.write();
            let model: ModelRecord = state.get(EntityKind::Model, model_id)?.decode()?;
            let jobs: Vec<Job> = state
                .list(EntityKind::Job, &ListFilter::owner(model.owner.as_str()))
                .iter()
                .map(Record::decode::<Job>)
                .collect::<Result<_, _>>()?;
            let doomed_jobs: Vec<&Job> = jobs
                .iter()
                .filter(|j| j.model_id.as_ref().is_some_and(|m| m.as_str() == model_id))
                .collect();
            let mut still_used: HashSet<String> = HashSet::new();
            for rec in state.list(EntityKind::Model, &ListFilter::default()) {
                if rec.id == model_id {
                    continue;
                }
                let other: ModelRecord = rec.decode()?;
                still_used.extend(other.dataset_ids.iter().map(|d| d.0.clone()));
            }
            let doomed_datasets: Vec<String> = model
                .dataset_ids
                .iter()
                .map(|d| d.0.clone())
                .filter(|d| !still_used.contains(d) && state.get(EntityKind::Dataset, d).is_ok())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();

            let mut ops = vec![Op::delete(EntityKind::Model, model_id)];
            ops.extend(doomed_jobs.iter().map(|j| Op::delete(EntityKind::Job, j.job_id.as_str())));
            ops.extend(doomed_datasets.iter().map(|d| Op::delete(EntityKind::Dataset, d)));

            let mut candidates = BTreeSet::new();
            for op in &ops {
                if let Op::Delete { kind, id, .. } = op {
                    collect_blob_ids(&state.get(*kind, id)?.payload, &mut candidates);
                }
            }
            state.transact(ops)?;
            let report = PurgeReport {
                model_id: model_id.to_owned(),
                jobs: doomed_jobs.iter().map(|j| j.job_id.0.clone()).collect(),
                datasets: doomed_datasets,
                blobs: Vec::new(),
            };
            (report, candidates)
        };
        let mut report = report;
        {
            let _g = self.log_lock.lock();
            for job in &report.jobs {
                logs::delete(&self.root.join("logs"), job)?;
            }
        }
        report.blobs = self.sweep(candidates)?;
        if let Some(j) = report.jobs.first() {
            tracing::debug!(model_id, first_job = %j, "purged model");
        }
        Ok(report)
    }

    /// Deletes one record and then any blob it referenced that is no longer
    /// referenced elsewhere. Returns the deleted blob ids.
    pub fn delete_and_sweep(&self, kind: EntityKind, id: &str) -> Result<Vec<String>, StoreError> {
        let mut candidates = BTreeSet::new();
        {
            let mut state = self.records.write();
            collect_blob_ids(&state.get(kind, id)?.payload, &mut candidates);
            state.transact(vec![Op::delete(kind, id)])?;
        }
        self.sweep(candidates)
    }

    /// Deletes blobs that no record references. Meant for startup, when no
    /// upload can be between its blob write and its record write.
    pub fn sweep_orphan_blobs(&self) -> Result<Vec<String>, StoreError> {
        let all = self.blob_ids()?;
        self.sweep(all)
    }

    /// Blobs not referenced by any record.
    pub fn orphan_blobs(&self) -> Result<BTreeSet<String>, StoreError> {
        let referenced = self.referenced_blobs();
        Ok(self.blob_ids()?.into_iter().filter(|b| !referenced.contains(b)).collect())
    }

    fn referenced_blobs(&self) -> BTreeSet<String> {
        let state = self.records.read();
        let mut out = BTreeSet::new();
        for rec in state.all() {
            collect_blob_ids(&rec.payload, &mut out);
        }
        out
    }

    fn sweep(&self, candidates: BTreeSet<String>) -> Result<Vec<String>, StoreError> {
        let _g = self.blob_lock.lock();
        let referenced = self.referenced_blobs();
        let mut deleted = Vec::new();
        for b in candidates {
            if !referenced.contains(&b) {
                blobs::delete(&self.root.join("blobs"), &b)?;
                deleted.push(b);
            }
        }
        Ok(deleted)
    }

    /// Train jobs for `model_id`, newest first.
    pub fn training_jobs(&self, model_id: &str) -> Result<Vec<Job>, StoreError> {
        let mut jobs: Vec<Job> = self.list_as(EntityKind::Job, &ListFilter::default())?;
        jobs.retain(|j| j.kind == JobKind::Train && j.model_id.as_ref().is_some_and(|m| m.as_str() == model_id));
        jobs.sort_by(|a, b| b.submitted_at.cmp(&a.submitted_at));
        Ok(jobs)
    }
}

/// Every `blob_id` string in a record payload.
fn collect_blob_ids(value: &serde_json::Value, out: &mut BTreeSet<String>) {
    match value {
        serde_json::Value::Object(map) => {
            if let (Some(serde_json::Value::String(id)), Some(_)) = (map.get("blob_id"), map.get("size")) {
                out.insert(id.clone());
            }
            map.values().for_each(|v| collect_blob_ids(v, out));
        }
        serde_json::Value::Array(items) => items.iter().for_each(|v| collect_blob_ids(v, out)),
        _ => {}
    }
}
