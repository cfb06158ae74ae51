//! JSON bodies of the REST API and the worker protocol.

use annolab_core::domain::{
    BlobRef, DatasetId, Job, JobId, JobKind, JobStatus, ModelId, ModelRecord, Role, UserId, Visibility,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenResponse {
    pub token: String,
    pub user_id: UserId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateUserRequest {
    pub username: String,
    pub password: String,
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default)]
    pub role: Option<Role>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserView {
    pub user_id: UserId,
    pub username: String,
    pub display_name: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelView {
    #[serde(flatten)]
    pub model: ModelRecord,
    /// From this model to its base; empty when the chain is broken.
    pub lineage: Vec<ModelId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchModelRequest {
    pub visibility: Visibility,
}

/// Exactly one input source must be given.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PredictRequest {
    /// UTF-8 text input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline_input: Option<String>,
    /// Binary input such as WAV audio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_b64: Option<String>,
    /// One of the caller's datasets, used as raw input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_ref: Option<DatasetId>,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: JobId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneRequest {
    pub dataset_id: DatasetId,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneResponse {
    pub job_id: JobId,
    pub new_model_id: ModelId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogsResponse {
    pub payload_b64: String,
    pub next_offset: u64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobActionResponse {
    pub job_id: JobId,
    pub status: JobStatus,
    pub cancel_requested: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeaseRequest {
    pub queue_classes: Vec<String>,
    pub worker_id: String,
}

/// What a worker receives for a leased job. Also the body POSTed to
/// external plugin servers, extended with the inline payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDocument {
    pub job_id: JobId,
    pub kind: JobKind,
    pub plugin_id: String,
    pub task_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_artifact_ref: Option<BlobRef>,
    #[serde(default)]
    pub input_ref: Option<BlobRef>,
    #[serde(default)]
    pub params: serde_json::Value,
    pub attempt: u32,
    pub fencing_token: u64,
    pub lease_ms: u64,
    /// Current log length; the worker appends from here.
    pub log_offset: u64,
}

impl TaskDocument {
    pub fn from_job(job: &Job, lease_ms: u64, log_offset: u64) -> Self {
        Self {
            job_id: job.job_id.clone(),
            kind: job.kind,
            plugin_id: job.plugin_id.clone(),
            task_name: job.task_name.clone(),
            model_artifact_ref: job.model_artifact.clone(),
            input_ref: job.input.clone(),
            params: job.params.clone(),
            attempt: job.attempt,
            fencing_token: job.lease.as_ref().map_or(0, |l| l.fencing_token),
            lease_ms,
            log_offset,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalRequest {
    #[serde(flatten)]
    pub task: TaskDocument,
    pub input_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_artifact_b64: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeartbeatRequest {
    pub job_id: JobId,
    pub worker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fencing_token: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeartbeatResponse {
    pub cancel_requested: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogAppendRequest {
    pub job_id: JobId,
    pub offset: u64,
    pub payload_b64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogAppendResponse {
    pub next_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Ok,
    Err,
    Cancelled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub job_id: JobId,
    pub worker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fencing_token: Option<u64>,
    pub outcome: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub status: JobStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub status: u16,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteInfo {
    pub method: String,
    pub path: String,
    /// "none", "user", "admin" or "worker".
    pub auth: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub name: String,
    pub version: String,
    pub lease_ms: u64,
    pub max_body_bytes: usize,
    pub routes: Vec<RouteInfo>,
}
