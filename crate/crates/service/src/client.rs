//! Typed HTTP client for the REST API and the worker protocol.

use std::time::Duration;

use base64::Engine;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use annolab_core::domain::{Dataset, DatasetFormat, DatasetId, Job, JobId, ModelId, Visibility};
use annolab_core::queue::QueueStats;

use crate::wire::*;

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{status} {code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, ClientError::Transport(_))
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
            src = s.source();
        }
        ClientError::Transport(msg)
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct ApiClient {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
}

impl ApiClient {
    pub fn new(server: &str, token: Option<String>) -> Self {
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(300))
            .build()
            .expect("http client");
        Self {
            http,
            base: server.trim_end_matches('/').to_owned(),
            token,
        }
    }

    pub fn with_token(&self, token: impl Into<String>) -> Self {
        Self {
            token: Some(token.into()),
            ..self.clone()
        }
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn server(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> reqwest::RequestBuilder {
        let req = self.http.request(method, format!("{}{}", self.base, path));
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> ClientResult<reqwest::Response> {
        let resp = req.send().await?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => ClientError::Api {
                status,
                code: body.code,
                message: body.message,
            },
            Err(_) => ClientError::Api {
                status,
                code: "http_error".into(),
                message: text,
            },
        })
    }

    /// Raw JSON call; `None` for 204 responses.
    pub async fn call(&self, method: Method, path: &str, body: Option<&Value>) -> ClientResult<Option<Value>> {
        let mut req = self.request(method, path);
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = self.send(req).await?;
        if resp.status() == StatusCode::NO_CONTENT {
            return Ok(None);
        }
        let bytes = resp.bytes().await?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn json<B: Serialize, T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> ClientResult<T> {
        let body = body
            .map(serde_json::to_value)
            .transpose()
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        let value = self.call(method, path, body.as_ref()).await?.unwrap_or(Value::Null);
        serde_json::from_value(value).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> ClientResult<T> {
        self.json::<(), T>(Method::GET, path, None).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> ClientResult<T> {
        self.json(Method::POST, path, Some(body)).await
    }

    async fn bytes(&self, path: &str) -> ClientResult<Vec<u8>> {
        let resp = self.send(self.request(Method::GET, path)).await?;
        Ok(resp.bytes().await?.to_vec())
    }

    pub async fn meta(&self) -> ClientResult<MetaResponse> {
        self.get("/api/meta").await
    }

    pub async fn login(&self, username: &str, password: &str) -> ClientResult<TokenResponse> {
        let req = TokenRequest {
            username: username.into(),
            password: password.into(),
        };
        self.post("/api/auth/token", &req).await
    }

    pub async fn me(&self) -> ClientResult<UserView> {
        self.get("/api/me").await
    }

    pub async fn create_user(&self, req: &CreateUserRequest) -> ClientResult<UserView> {
        self.post("/api/users", req).await
    }

    pub async fn plugins(&self) -> ClientResult<Value> {
        self.get("/api/plugins").await
    }

    pub async fn queue_stats(&self) -> ClientResult<QueueStats> {
        self.get("/api/queue/stats").await
    }

    pub async fn models(&self) -> ClientResult<Vec<ModelView>> {
        self.get("/api/models").await
    }

    pub async fn model(&self, id: &str) -> ClientResult<ModelView> {
        self.get(&format!("/api/models/{id}")).await
    }

    pub async fn set_visibility(&self, id: &str, visibility: Visibility) -> ClientResult<ModelView> {
        self.json(Method::PATCH, &format!("/api/models/{id}"), Some(&PatchModelRequest { visibility }))
            .await
    }

    pub async fn delete_model(&self, id: &str) -> ClientResult<Value> {
        self.json::<(), _>(Method::DELETE, &format!("/api/models/{id}"), None).await
    }

    pub async fn predict(&self, model: &str, req: &PredictRequest) -> ClientResult<JobCreated> {
        self.post(&format!("/api/models/{model}/predict"), req).await
    }

    pub async fn finetune(&self, model: &str, dataset: &DatasetId, params: Value) -> ClientResult<FinetuneResponse> {
        let req = FinetuneRequest {
            dataset_id: dataset.clone(),
            params,
        };
        self.post(&format!("/api/models/{model}/finetune"), &req).await
    }

    pub async fn upload_dataset(&self, format: DatasetFormat, task_name: &str, bytes: Vec<u8>) -> ClientResult<Dataset> {
        let req = self
            .request(Method::POST, "/api/datasets")
            .query(&[("format", format.as_str()), ("task_name", task_name)])
            .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
            .body(bytes);
        let resp = self.send(req).await?;
        resp.json().await.map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub async fn datasets(&self) -> ClientResult<Vec<Dataset>> {
        self.get("/api/datasets").await
    }

    pub async fn dataset(&self, id: &str) -> ClientResult<Dataset> {
        self.get(&format!("/api/datasets/{id}")).await
    }

    pub async fn delete_dataset(&self, id: &str) -> ClientResult<Value> {
        self.json::<(), _>(Method::DELETE, &format!("/api/datasets/{id}"), None).await
    }

    pub async fn jobs(&self) -> ClientResult<Vec<Job>> {
        self.get("/api/jobs").await
    }

    pub async fn job(&self, id: &str) -> ClientResult<Job> {
        self.get(&format!("/api/jobs/{id}")).await
    }

    pub async fn logs(&self, id: &str, offset: u64) -> ClientResult<LogsResponse> {
        self.get(&format!("/api/jobs/{id}/logs?offset={offset}")).await
    }

    pub async fn cancel(&self, id: &str) -> ClientResult<JobActionResponse> {
        self.post(&format!("/api/jobs/{id}/cancel"), &Value::Null).await
    }

    pub async fn restart(&self, id: &str) -> ClientResult<JobActionResponse> {
        self.post(&format!("/api/jobs/{id}/restart"), &Value::Null).await
    }

    pub async fn result(&self, id: &str) -> ClientResult<Vec<u8>> {
        self.bytes(&format!("/api/jobs/{id}/result")).await
    }

    /// Polls until the job is terminal.
    pub async fn wait_job(&self, id: &str, poll: Duration) -> ClientResult<Job> {
        loop {
            let job = self.job(id).await?;
            if job.status.is_terminal() {
                return Ok(job);
            }
            tokio::time::sleep(poll).await;
        }
    }

    /// Polls until the model leaves the training state.
    pub async fn wait_model(&self, id: &ModelId, poll: Duration) -> ClientResult<ModelView> {
        loop {
            let view = self.model(id.as_str()).await?;
            if view.model.status != annolab_core::domain::ModelStatus::Training {
                return Ok(view);
            }
            tokio::time::sleep(poll).await;
        }
    }

    // worker protocol

    pub async fn lease(&self, worker_id: &str, queue_classes: &[String]) -> ClientResult<Option<TaskDocument>> {
        let req = LeaseRequest {
            queue_classes: queue_classes.to_vec(),
            worker_id: worker_id.to_owned(),
        };
        let body = serde_json::to_value(&req).map_err(|e| ClientError::Decode(e.to_string()))?;
        match self.call(Method::POST, "/api/worker/lease", Some(&body)).await? {
            None => Ok(None),
            Some(v) => serde_json::from_value(v)
                .map(Some)
                .map_err(|e| ClientError::Decode(e.to_string())),
        }
    }

    pub async fn heartbeat(&self, job_id: &JobId, worker_id: &str, fencing_token: u64) -> ClientResult<HeartbeatResponse> {
        let req = HeartbeatRequest {
            job_id: job_id.clone(),
            worker_id: worker_id.to_owned(),
            fencing_token: Some(fencing_token),
        };
        self.post("/api/worker/heartbeat", &req).await
    }

    pub async fn append_log(&self, job_id: &JobId, offset: u64, payload: &[u8]) -> ClientResult<u64> {
        let req = LogAppendRequest {
            job_id: job_id.clone(),
            offset,
            payload_b64: B64.encode(payload),
        };
        let resp: LogAppendResponse = self.post("/api/worker/logs", &req).await?;
        Ok(resp.next_offset)
    }

    pub async fn complete(&self, req: &CompleteRequest) -> ClientResult<CompleteResponse> {
        self.post("/api/worker/complete", req).await
    }

    pub async fn blob(&self, blob_id: &str) -> ClientResult<Vec<u8>> {
        self.bytes(&format!("/api/worker/blobs/{blob_id}")).await
    }
}
