//! Entity types shared by every other part of the backend, plus the pure
//! validation rules that govern them (manifest checks, the job state machine,
//! model lineage).

mod clock;
mod dataset;
mod ids;
mod job;
mod log;
mod manifest;
mod model;
mod user;

pub use clock::{Clock, FakeClock, SystemClock, Timestamp};
pub use dataset::{read_text_pairs, Dataset, DatasetError, DatasetFormat, TextPair};
pub use ids::{BlobRef, DatasetId, JobId, ModelId, UserId};
pub use job::{
    validate_transition, Job, JobEvent, JobKind, JobStatus, Lease, TransitionError, DEFAULT_MAX_ATTEMPTS,
    LEASE_EXPIRED_REASON,
};
pub use log::LogChunk;
#[cfg(test)]
pub(crate) use manifest::check_manifest;
pub use manifest::{
    validate_manifest, Execution, InputKind, ManifestError, OutputKind, PluginManifest, TaskKind, TaskSpec,
    MANIFEST_FILE_NAME,
};
pub use model::{lineage_chain, LineageError, ModelRecord, ModelStatus, Visibility};
pub use user::{AuthToken, Role, UserAccount};
