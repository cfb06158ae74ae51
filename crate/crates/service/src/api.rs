use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use annolab_core::domain::{
    Dataset, DatasetFormat, DatasetId, Job, JobId, JobKind, JobStatus, ModelId, ModelRecord, ModelStatus, Role,
    TaskKind, UserAccount, Visibility,
};
use annolab_core::plugins::count_dataset_items;
use annolab_core::queue::{Completion, LeaseClaim};
use annolab_core::store::{EntityKind, ListFilter};

use crate::auth::{Caller, WorkerCaller};
use crate::error::ApiError;
use crate::state::AppState;
use crate::wire::*;

pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

/// JSON request body with errors reported as [`ApiError`].
pub struct Body<T>(pub T);

fn body_rejection(e: BytesRejection) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload_too_large",
            format!("request bodies are limited to {MAX_BODY_BYTES} bytes"),
        )
    } else {
        ApiError::bad_request(e.body_text())
    }
}

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state).await.map_err(body_rejection)?;
        if bytes.is_empty() {
            return Err(ApiError::bad_request("request body required"));
        }
        serde_json::from_slice(&bytes)
            .map(Body)
            .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
    }
}

/// Raw upload body.
pub struct Raw(pub Bytes);

impl<S: Send + Sync> FromRequest<S> for Raw {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Bytes::from_request(req, state).await.map(Raw).map_err(body_rejection)
    }
}

fn route(method: &str, path: &str, auth: &str) -> RouteInfo {
    RouteInfo {
        method: method.into(),
        path: path.into(),
        auth: auth.into(),
    }
}

pub fn route_table() -> Vec<RouteInfo> {
    vec![
        route("GET", "/api/meta", "none"),
        route("POST", "/api/auth/token", "none"),
        route("GET", "/api/me", "user"),
        route("POST", "/api/users", "admin"),
        route("GET", "/api/plugins", "user"),
        route("GET", "/api/queue/stats", "user"),
        route("GET", "/api/models", "user"),
        route("GET", "/api/models/{id}", "user"),
        route("PATCH", "/api/models/{id}", "user"),
        route("DELETE", "/api/models/{id}", "user"),
        route("POST", "/api/models/{id}/predict", "user"),
        route("POST", "/api/models/{id}/finetune", "user"),
        route("GET", "/api/datasets", "user"),
        route("POST", "/api/datasets", "user"),
        route("GET", "/api/datasets/{id}", "user"),
        route("DELETE", "/api/datasets/{id}", "user"),
        route("GET", "/api/jobs", "user"),
        route("GET", "/api/jobs/{id}", "user"),
        route("GET", "/api/jobs/{id}/logs", "user"),
        route("POST", "/api/jobs/{id}/cancel", "user"),
        route("POST", "/api/jobs/{id}/restart", "user"),
        route("GET", "/api/jobs/{id}/result", "user"),
        route("POST", "/api/worker/lease", "worker"),
        route("POST", "/api/worker/heartbeat", "worker"),
        route("POST", "/api/worker/logs", "worker"),
        route("POST", "/api/worker/complete", "worker"),
        route("GET", "/api/worker/blobs/{blob_id}", "worker"),
    ]
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/auth/token", post(issue_token))
        .route("/api/me", get(me))
        .route("/api/users", post(create_user))
        .route("/api/plugins", get(plugins))
        .route("/api/queue/stats", get(queue_stats))
        .route("/api/models", get(list_models))
        .route("/api/models/{id}", get(get_model).patch(patch_model).delete(delete_model))
        .route("/api/models/{id}/predict", post(predict))
        .route("/api/models/{id}/finetune", post(finetune))
        .route("/api/datasets", get(list_datasets).post(upload_dataset))
        .route("/api/datasets/{id}", get(get_dataset).delete(delete_dataset))
        .route("/api/jobs", get(list_jobs))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/logs", get(job_logs))
        .route("/api/jobs/{id}/cancel", post(cancel_job))
        .route("/api/jobs/{id}/restart", post(restart_job))
        .route("/api/jobs/{id}/result", get(job_result))
        .route("/api/worker/lease", post(worker_lease))
        .route("/api/worker/heartbeat", post(worker_heartbeat))
        .route("/api/worker/logs", post(worker_logs))
        .route("/api/worker/complete", post(worker_complete))
        .route("/api/worker/blobs/{blob_id}", get(worker_blob))
        .fallback(|| async { ApiError::not_found("route") })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn meta(State(state): Shared) -> Json<MetaResponse> {
    Json(MetaResponse {
        name: "annolab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        lease_ms: state.lease_ms,
        max_body_bytes: MAX_BODY_BYTES,
        routes: route_table(),
    })
}

fn user_view(u: &UserAccount) -> UserView {
    UserView {
        user_id: u.user_id.clone(),
        username: u.username.clone(),
        display_name: u.display_name.clone(),
        role: u.role,
    }
}

async fn issue_token(State(state): Shared, Body(req): Body<TokenRequest>) -> ApiResult<Json<TokenResponse>> {
    let user = state
        .find_user(&req.username)?
        .filter(|u| u.verify_password(&req.password))
        .ok_or_else(|| ApiError::unauthorized("bad credentials"))?;
    let token = state.issue_token(&user)?;
    Ok(Json(TokenResponse {
        token: token.as_str().to_owned(),
        user_id: user.user_id,
    }))
}

async fn me(Caller(user): Caller) -> Json<UserView> {
    Json(user_view(&user))
}

async fn create_user(
    State(state): Shared,
    Caller(caller): Caller,
    Body(req): Body<CreateUserRequest>,
) -> ApiResult<(StatusCode, Json<UserView>)> {
    if caller.role != Role::Admin {
        return Err(ApiError::forbidden("only admins can create accounts"));
    }
    let account = state.create_user(&req.username, &req.password, req.role.unwrap_or(Role::User), req.display_name)?;
    Ok((StatusCode::CREATED, Json(user_view(&account))))
}

async fn plugins(State(state): Shared, _caller: Caller) -> Json<serde_json::Value> {
    let manifests: Vec<_> = state.registry.manifests().cloned().collect();
    Json(serde_json::json!({ "plugins": manifests }))
}

async fn queue_stats(State(state): Shared, _caller: Caller) -> Json<annolab_core::queue::QueueStats> {
    Json(state.queue.stats())
}

// ---- models ----

fn is_owner(user: &UserAccount, model: &ModelRecord) -> bool {
    model.owner == user.user_id
}

/// The model if the caller may see it; 404 otherwise.
fn visible_model(state: &AppState, user: &UserAccount, id: &str) -> ApiResult<(ModelRecord, u64)> {
    let not_found = || ApiError::not_found(format!("model {id}"));
    let (model, version) = state.store.get_as::<ModelRecord>(EntityKind::Model, id).map_err(|e| {
        if e.is_not_found() {
            not_found()
        } else {
            e.into()
        }
    })?;
    if is_owner(user, &model) || model.visibility == Visibility::Public {
        Ok((model, version))
    } else {
        Err(not_found())
    }
}

fn model_view(state: &AppState, user: &UserAccount, mut model: ModelRecord) -> ModelView {
    let (lineage, lineage_error) = match state.lineage(&model.model_id) {
        Ok(chain) => (chain, None),
        Err(e) => (Vec::new(), Some(e)),
    };
    if !is_owner(user, &model) {
        model.dataset_ids.clear();
    }
    ModelView {
        model,
        lineage,
        lineage_error,
    }
}

async fn list_models(State(state): Shared, Caller(user): Caller) -> ApiResult<Json<Vec<ModelView>>> {
    let mut models: Vec<ModelRecord> = state.store.list_as(EntityKind::Model, &ListFilter::owner(user.user_id.as_str()))?;
    let public: Vec<ModelRecord> = state.store.list_as(EntityKind::Model, &ListFilter::visibility("public"))?;
    models.extend(public.into_iter().filter(|m| m.owner != user.user_id));
    models.sort_by(|a, b| (a.created_at, &a.model_id).cmp(&(b.created_at, &b.model_id)));
    Ok(Json(models.into_iter().map(|m| model_view(&state, &user, m)).collect()))
}

async fn get_model(State(state): Shared, Caller(user): Caller, Path(id): Path<String>) -> ApiResult<Json<ModelView>> {
    let (model, _) = visible_model(&state, &user, &id)?;
    Ok(Json(model_view(&state, &user, model)))
}

async fn patch_model(
    State(state): Shared,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<PatchModelRequest>,
) -> ApiResult<Json<ModelView>> {
    let (mut model, version) = visible_model(&state, &user, &id)?;
    if !is_owner(&user, &model) {
        return Err(ApiError::forbidden("only the owner can change a model"));
    }
    model.visibility = req.visibility;
    state.store.put(EntityKind::Model, &id, Some(version), &model)?;
    Ok(Json(model_view(&state, &user, model)))
}

async fn delete_model(
    State(state): Shared,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let (model, _) = visible_model(&state, &user, &id)?;
    if !is_owner(&user, &model) {
        return Err(ApiError::forbidden("only the owner can delete a model"));
    }
    // stop the queue from writing these jobs back while they are purged
    let jobs: Vec<Job> = state.store.list_as(EntityKind::Job, &ListFilter::owner(user.user_id.as_str()))?;
    for j in jobs.iter().filter(|j| j.model_id.as_ref() == Some(&model.model_id)) {
        state.queue.remove(&j.job_id);
    }
    let report = state.store.purge_model_cascade(&id)?;
    tracing::info!(model_id = %id, jobs = report.jobs.len(), datasets = report.datasets.len(), "model deleted");
    Ok(Json(serde_json::json!({ "deleted": report.deleted_ids() })))
}

fn decode_b64(field: &str, s: &str) -> ApiResult<Vec<u8>> {
    B64.decode(s.trim())
        .map_err(|e| ApiError::bad_request(format!("{field} is not valid base64: {e}")))
}

fn owned_dataset(state: &AppState, user: &UserAccount, id: &str) -> ApiResult<Dataset> {
    match state.store.get_as::<Dataset>(EntityKind::Dataset, id) {
        Ok((d, _)) if d.owner == user.user_id => Ok(d),
        Ok(_) => Err(ApiError::not_found(format!("dataset {id}"))),
        Err(e) if e.is_not_found() => Err(ApiError::not_found(format!("dataset {id}"))),
        Err(e) => Err(e.into()),
    }
}

async fn predict(
    State(state): Shared,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<PredictRequest>,
) -> ApiResult<(StatusCode, Json<JobCreated>)> {
    let (model, _) = visible_model(&state, &user, &id)?;
    if model.status != ModelStatus::Ready {
        return Err(ApiError::conflict("not_ready", format!("model {id} is {:?}", model.status).to_lowercase()));
    }
    let entry = state
        .registry
        .get(&model.plugin_id)
        .ok_or_else(|| ApiError::conflict("not_ready", format!("plugin {} is not registered", model.plugin_id)))?;
    let spec = entry
        .manifest
        .task(&model.task_name)
        .filter(|t| t.kind == TaskKind::Predict)
        .ok_or_else(|| ApiError::conflict("not_ready", format!("plugin has no predict task {}", model.task_name)))?;
    let input = match (&req.inline_input, &req.input_b64, &req.input_ref) {
        (Some(text), None, None) => state.store.blob_put(text.as_bytes())?,
        (None, Some(b64), None) => state.store.blob_put(&decode_b64("input_b64", b64)?)?,
        (None, None, Some(ds)) => owned_dataset(&state, &user, ds.as_str())?.blob,
        _ => {
            return Err(ApiError::bad_request(
                "give exactly one of inline_input, input_b64 or input_ref",
            ))
        }
    };
    let mut job = Job::new(
        JobId::generate(),
        user.user_id.clone(),
        JobKind::Predict,
        &model.plugin_id,
        &spec.task_name,
        &spec.queue_class,
        state.now(),
    );
    job.model_id = Some(model.model_id.clone());
    job.input = Some(input);
    job.model_artifact = model.artifact.clone();
    job.params = req.params;
    let job_id = job.job_id.clone();
    state.queue.enqueue(job)?;
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id })))
}

async fn finetune(
    State(state): Shared,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<FinetuneRequest>,
) -> ApiResult<(StatusCode, Json<FinetuneResponse>)> {
    let (parent, _) = visible_model(&state, &user, &id)?;
    let dataset = owned_dataset(&state, &user, req.dataset_id.as_str())?;
    if parent.status != ModelStatus::Ready {
        return Err(ApiError::conflict("not_ready", format!("model {id} is not ready")));
    }
    let entry = state
        .registry
        .get(&parent.plugin_id)
        .ok_or_else(|| ApiError::conflict("not_ready", format!("plugin {} is not registered", parent.plugin_id)))?;
    let predict_spec = entry.manifest.task(&parent.task_name);
    if !predict_spec.is_some_and(|t| t.supports_finetune) {
        return Err(ApiError::bad_request(format!("task {} does not support fine-tuning", parent.task_name)));
    }
    let train = entry
        .manifest
        .train_task_for(dataset.format.input_kind())
        .filter(|t| t.supports_finetune)
        .ok_or_else(|| {
            ApiError::bad_request(format!(
                "dataset format {:?} does not match any training task of plugin {}",
                dataset.format, parent.plugin_id
            ))
        })?;
    let now = state.now();
    let child = ModelRecord {
        model_id: ModelId::generate(),
        owner: user.user_id.clone(),
        plugin_id: parent.plugin_id.clone(),
        task_name: parent.task_name.clone(),
        parent_model_id: Some(parent.model_id.clone()),
        dataset_ids: vec![dataset.dataset_id.clone()],
        visibility: Visibility::Private,
        status: ModelStatus::Training,
        artifact: None,
        created_at: now,
    };
    let mut job = Job::new(
        JobId::generate(),
        user.user_id.clone(),
        JobKind::Train,
        &parent.plugin_id,
        &train.task_name,
        &train.queue_class,
        now,
    );
    job.model_id = Some(child.model_id.clone());
    job.dataset_id = Some(dataset.dataset_id.clone());
    job.input = Some(dataset.blob.clone());
    job.model_artifact = parent.artifact.clone();
    job.params = req.params;
    state.store.put(EntityKind::Model, child.model_id.as_str(), Some(0), &child)?;
    let job_id = job.job_id.clone();
    state.queue.enqueue(job)?;
    Ok((
        StatusCode::ACCEPTED,
        Json(FinetuneResponse {
            job_id,
            new_model_id: child.model_id,
        }),
    ))
}

// ---- datasets ----

#[derive(Deserialize)]
struct UploadQuery {
    format: String,
    #[serde(default)]
    task_name: String,
}

async fn upload_dataset(
    State(state): Shared,
    Caller(user): Caller,
    Query(q): Query<UploadQuery>,
    Raw(bytes): Raw,
) -> ApiResult<(StatusCode, Json<Dataset>)> {
    let format = DatasetFormat::parse(&q.format).ok_or_else(|| {
        ApiError::bad_request(format!(
            "unknown dataset format {:?}; expected text_pairs_jsonl, enrollment_json or embedding_windows_json",
            q.format
        ))
    })?;
    let item_count = count_dataset_items(format, &bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let blob = state.store.blob_put(&bytes)?;
    let dataset = Dataset {
        dataset_id: DatasetId::generate(),
        owner: user.user_id.clone(),
        task_name: q.task_name,
        format,
        item_count,
        blob,
        created_at: state.now(),
    };
    state
        .store
        .put(EntityKind::Dataset, dataset.dataset_id.as_str(), Some(0), &dataset)?;
    Ok((StatusCode::CREATED, Json(dataset)))
}

async fn list_datasets(State(state): Shared, Caller(user): Caller) -> ApiResult<Json<Vec<Dataset>>> {
    let mut ds: Vec<Dataset> = state.store.list_as(EntityKind::Dataset, &ListFilter::owner(user.user_id.as_str()))?;
    ds.sort_by(|a, b| (a.created_at, &a.dataset_id).cmp(&(b.created_at, &b.dataset_id)));
    Ok(Json(ds))
}

async fn get_dataset(State(state): Shared, Caller(user): Caller, Path(id): Path<String>) -> ApiResult<Json<Dataset>> {
    Ok(Json(owned_dataset(&state, &user, &id)?))
}

async fn delete_dataset(
    State(state): Shared,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    owned_dataset(&state, &user, &id)?;
    let blobs = state.store.delete_and_sweep(EntityKind::Dataset, &id)?;
    Ok(Json(serde_json::json!({ "deleted": [format!("dataset:{id}")], "blobs_removed": blobs.len() })))
}

// ---- jobs ----

fn owned_job(state: &AppState, user: &UserAccount, id: &str) -> ApiResult<Job> {
    let job = state.queue.get(&JobId::from(id)).filter(|j| j.owner == user.user_id);
    job.ok_or_else(|| ApiError::not_found(format!("job {id}")))
}

async fn list_jobs(State(state): Shared, Caller(user): Caller) -> Json<Vec<Job>> {
    let mut jobs: Vec<Job> = state.queue.jobs().into_iter().filter(|j| j.owner == user.user_id).collect();
    jobs.sort_by(|a, b| (a.submitted_at, &a.job_id).cmp(&(b.submitted_at, &b.job_id)));
    Json(jobs)
}

async fn get_job(State(state): Shared, Caller(user): Caller, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    Ok(Json(owned_job(&state, &user, &id)?))
}

#[derive(Deserialize)]
struct LogQuery {
    #[serde(default)]
    offset: u64,
}

async fn job_logs(
    State(state): Shared,
    Caller(user): Caller,
    Path(id): Path<String>,
    Query(q): Query<LogQuery>,
) -> ApiResult<Json<LogsResponse>> {
    owned_job(&state, &user, &id)?;
    let read = state.store.read_log(&id, q.offset)?;
    Ok(Json(LogsResponse {
        payload_b64: B64.encode(&read.payload),
        next_offset: read.next_offset,
        finished: read.finished,
    }))
}

fn action_response(job: &Job) -> Json<JobActionResponse> {
    Json(JobActionResponse {
        job_id: job.job_id.clone(),
        status: job.status,
        cancel_requested: job.cancel_requested,
    })
}

async fn cancel_job(
    State(state): Shared,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> ApiResult<Json<JobActionResponse>> {
    owned_job(&state, &user, &id)?;
    let job = state.queue.cancel(&JobId::from(id.as_str()))?;
    state.sync_model(&job)?;
    Ok(action_response(&job))
}

async fn restart_job(
    State(state): Shared,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> ApiResult<Json<JobActionResponse>> {
    owned_job(&state, &user, &id)?;
    let job = state.queue.restart(&JobId::from(id.as_str()), state.now())?;
    state.sync_model(&job)?;
    Ok(action_response(&job))
}

async fn job_result(State(state): Shared, Caller(user): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let job = owned_job(&state, &user, &id)?;
    let blob = match (job.status, &job.result) {
        (JobStatus::Succeeded, Some(b)) => b.clone(),
        (JobStatus::Succeeded, None) => return Err(ApiError::not_found(format!("result of job {id}"))),
        (status, _) => return Err(ApiError::conflict("not_ready", format!("job {id} is {status}"))),
    };
    let bytes = state.store.blob_get(&blob)?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

// ---- worker protocol ----

async fn worker_lease(
    State(state): Shared,
    WorkerCaller(_w): WorkerCaller,
    Body(req): Body<LeaseRequest>,
) -> ApiResult<Response> {
    if req.worker_id.is_empty() {
        return Err(ApiError::bad_request("worker_id must not be empty"));
    }
    if req.queue_classes.is_empty() {
        return Err(ApiError::bad_request("queue_classes must not be empty"));
    }
    let Some(job) = state.queue.lease_any(&req.queue_classes, &req.worker_id, state.now())? else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    state.sync_model(&job)?;
    let log_offset = state.store.log_len(job.job_id.as_str())?;
    Ok(Json(TaskDocument::from_job(&job, state.lease_ms, log_offset)).into_response())
}

fn claim(worker_id: &str, fencing_token: Option<u64>) -> LeaseClaim {
    LeaseClaim {
        worker_id: worker_id.to_owned(),
        fencing_token,
    }
}

async fn worker_heartbeat(
    State(state): Shared,
    WorkerCaller(_w): WorkerCaller,
    Body(req): Body<HeartbeatRequest>,
) -> ApiResult<Json<HeartbeatResponse>> {
    let reply = state
        .queue
        .heartbeat(&req.job_id, &claim(&req.worker_id, req.fencing_token), state.now());
    if let Err(annolab_core::queue::QueueError::LeaseExpired(_)) = &reply {
        if let Some(job) = state.queue.get(&req.job_id) {
            state.sync_model(&job)?;
        }
    }
    Ok(Json(HeartbeatResponse {
        cancel_requested: reply?.cancel_requested,
    }))
}

async fn worker_logs(
    State(state): Shared,
    WorkerCaller(_w): WorkerCaller,
    Body(req): Body<LogAppendRequest>,
) -> ApiResult<Json<LogAppendResponse>> {
    let job = state
        .queue
        .get(&req.job_id)
        .ok_or_else(|| ApiError::not_found(format!("job {}", req.job_id)))?;
    if job.status != JobStatus::Running {
        return Err(ApiError::conflict("lease_lost", format!("job {} is {}", job.job_id, job.status)));
    }
    let payload = decode_b64("payload_b64", &req.payload_b64)?;
    let next_offset = state.store.append_log(req.job_id.as_str(), req.offset, &payload)?;
    Ok(Json(LogAppendResponse { next_offset }))
}

async fn worker_complete(
    State(state): Shared,
    WorkerCaller(_w): WorkerCaller,
    Body(req): Body<CompleteRequest>,
) -> ApiResult<Json<CompleteResponse>> {
    let outcome = match req.outcome {
        OutcomeKind::Ok => {
            let bytes = decode_b64("result_b64", req.result_b64.as_deref().unwrap_or(""))?;
            Completion::Ok(Some(state.store.blob_put(&bytes)?))
        }
        OutcomeKind::Err => Completion::Err(req.reason.unwrap_or_else(|| "unspecified error".into())),
        OutcomeKind::Cancelled => Completion::Cancelled,
    };
    let result = state
        .queue
        .complete(&req.job_id, &claim(&req.worker_id, req.fencing_token), outcome, state.now());
    let job = match result {
        Ok(job) => job,
        Err(e) => {
            if let Some(job) = state.queue.get(&req.job_id) {
                state.sync_model(&job)?;
            }
            // a stored-but-rejected result blob is swept at next startup
            return Err(e.into());
        }
    };
    state.sync_model(&job)?;
    Ok(Json(CompleteResponse { status: job.status }))
}

async fn worker_blob(
    State(state): Shared,
    WorkerCaller(_w): WorkerCaller,
    Path(blob_id): Path<String>,
) -> ApiResult<Response> {
    let bytes = state.store.blob_get_id(&blob_id)?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}
