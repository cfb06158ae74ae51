//! Worker node: leases jobs over HTTP and runs them through the plugin registry.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use parking_lot::Mutex;
use thiserror::Error;
use tokio::sync::{watch, Semaphore};
use tokio::task::JoinSet;

use annolab_core::plugins::{run_plugin, ExecutionOutcome, Executor, LogSink, PluginRegistry, TaskContext, TaskInput};

use crate::client::{ApiClient, ClientError};
use crate::wire::{CompleteRequest, ExternalRequest, OutcomeKind, TaskDocument};

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;
const LOG_FLUSH_INTERVAL: Duration = Duration::from_millis(200);

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub worker_id: String,
    pub server: String,
    pub token: String,
    pub queues: Vec<String>,
    pub parallelism: usize,
    pub plugins_dir: Option<PathBuf>,
    pub poll_interval: Duration,
    pub external_timeout: Duration,
    pub backoff_cap: Duration,
}

impl WorkerConfig {
    pub fn new(server: impl Into<String>, token: impl Into<String>, queues: Vec<String>) -> Self {
        Self {
            worker_id: default_worker_id(),
            server: server.into(),
            token: token.into(),
            queues,
            parallelism: 2,
            plugins_dir: None,
            poll_interval: Duration::from_millis(500),
            external_timeout: Duration::from_secs(120),
            backoff_cap: Duration::from_secs(30),
        }
    }

    pub fn validate(&self) -> Result<(), WorkerError> {
        if self.parallelism == 0 {
            return Err(WorkerError::Config("parallelism must be at least 1".into()));
        }
        if self.queues.is_empty() || self.queues.iter().any(|q| q.trim().is_empty()) {
            return Err(WorkerError::Config("at least one queue class is required".into()));
        }
        if self.worker_id.is_empty() {
            return Err(WorkerError::Config("worker id must not be empty".into()));
        }
        Ok(())
    }

    /// Registry from `plugins_dir`, or the built-ins alone.
    pub fn registry(&self) -> Result<PluginRegistry, WorkerError> {
        match &self.plugins_dir {
            Some(dir) => PluginRegistry::discover(dir)
                .map_err(|e| WorkerError::Config(format!("plugins dir {}: {e}", dir.display()))),
            None => Ok(PluginRegistry::builtin()),
        }
    }
}

/// Host name plus a random suffix.
pub fn default_worker_id() -> String {
    let host = std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
        .map(|h| h.trim().to_owned())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "worker".into());
    let suffix = uuid::Uuid::now_v7().simple().to_string();
    format!("{host}-{}", &suffix[suffix.len() - 6..])
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("invalid worker configuration: {0}")]
    Config(String),
    #[error("the server rejected the worker token")]
    InvalidToken,
    #[error("server refused the lease request: {0}")]
    Protocol(ClientError),
}

#[derive(Debug, Default)]
struct Counters {
    leased: AtomicUsize,
    completed: AtomicUsize,
    abandoned: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub leased: usize,
    pub completed: usize,
    pub abandoned: usize,
    pub peak_in_flight: usize,
}

impl Counters {
    fn snapshot(&self) -> WorkerStats {
        WorkerStats {
            leased: self.leased.load(Ordering::SeqCst),
            completed: self.completed.load(Ordering::SeqCst),
            abandoned: self.abandoned.load(Ordering::SeqCst),
            peak_in_flight: self.peak_in_flight.load(Ordering::SeqCst),
        }
    }
}

/// Runs until `shutdown` turns true, then waits for in-flight tasks.
/// Dropping the future abandons everything, like a crashed process.
pub async fn run_worker(
    config: WorkerConfig,
    registry: Arc<PluginRegistry>,
    mut shutdown: watch::Receiver<bool>,
) -> Result<WorkerStats, WorkerError> {
    config.validate()?;
    let client = ApiClient::new(&config.server, Some(config.token.clone()));
    let counters = Arc::new(Counters::default());
    let slots = Arc::new(Semaphore::new(config.parallelism));
    let mut tasks = JoinSet::new();
    let mut backoff = config.poll_interval;
    tracing::info!(worker_id = %config.worker_id, queues = ?config.queues, parallelism = config.parallelism, "worker started");

    let result = loop {
        if *shutdown.borrow() {
            break Ok(());
        }
        while tasks.try_join_next().is_some() {}
        let permit = tokio::select! {
            p = slots.clone().acquire_owned() => p.expect("semaphore closed"),
            _ = shutdown.changed() => continue,
        };
        match client.lease(&config.worker_id, &config.queues).await {
            Ok(Some(task)) => {
                backoff = config.poll_interval;
                counters.leased.fetch_add(1, Ordering::SeqCst);
                let runner = TaskRunner {
                    client: client.clone(),
                    registry: registry.clone(),
                    worker_id: config.worker_id.clone(),
                    external_timeout: config.external_timeout,
                    counters: counters.clone(),
                };
                tasks.spawn(async move {
                    let _permit = permit;
                    runner.run(task).await;
                });
            }
            Ok(None) => {
                drop(permit);
                backoff = config.poll_interval;
                sleep_or_shutdown(config.poll_interval, &mut shutdown).await;
            }
            Err(e) if e.status() == Some(401) => break Err(WorkerError::InvalidToken),
            Err(e) if e.is_transport() || e.status().is_some_and(|s| s >= 500) => {
                drop(permit);
                tracing::warn!(error = %e, retry_in_ms = backoff.as_millis() as u64, "server unreachable");
                sleep_or_shutdown(backoff, &mut shutdown).await;
                backoff = (backoff * 2).min(config.backoff_cap);
            }
            Err(e) => break Err(WorkerError::Protocol(e)),
        }
    };
    while tasks.join_next().await.is_some() {}
    tracing::info!(worker_id = %config.worker_id, "worker stopped");
    result.map(|()| counters.snapshot())
}

async fn sleep_or_shutdown(d: Duration, shutdown: &mut watch::Receiver<bool>) {
    tokio::select! {
        _ = tokio::time::sleep(d) => {}
        _ = shutdown.changed() => {}
    }
}

/// Helper tasks die with the task that owns them.
struct AbortOnDrop<T>(tokio::task::JoinHandle<T>);

impl<T> Drop for AbortOnDrop<T> {
    fn drop(&mut self) {
        self.0.abort();
    }
}

/// Log text not yet shipped to the server.
#[derive(Default)]
struct PendingLog(Mutex<String>);

impl LogSink for PendingLog {
    fn write(&self, text: &str) {
        self.0.lock().push_str(text);
    }
}

impl PendingLog {
    fn take(&self) -> String {
        std::mem::take(&mut *self.0.lock())
    }
}

struct LogShipper {
    client: ApiClient,
    job_id: annolab_core::domain::JobId,
    offset: u64,
    unsent: Vec<u8>,
    dead: bool,
}

impl LogShipper {
    async fn flush(&mut self, pending: &PendingLog) {
        self.unsent.extend_from_slice(pending.take().as_bytes());
        if self.dead || self.unsent.is_empty() {
            return;
        }
        match self.client.append_log(&self.job_id, self.offset, &self.unsent).await {
            Ok(next) => {
                self.offset = next;
                self.unsent.clear();
            }
            Err(e) if e.is_transport() => tracing::debug!(error = %e, "log flush failed, will retry"),
            Err(e) => {
                tracing::warn!(job_id = %self.job_id, error = %e, "log append rejected");
                self.dead = true;
            }
        }
    }
}

struct TaskRunner {
    client: ApiClient,
    registry: Arc<PluginRegistry>,
    worker_id: String,
    external_timeout: Duration,
    counters: Arc<Counters>,
}

impl TaskRunner {
    async fn run(self, task: TaskDocument) {
        let now = self.counters.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.counters.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.run_inner(task).await;
        self.counters.in_flight.fetch_sub(1, Ordering::SeqCst);
    }

    async fn run_inner(&self, task: TaskDocument) {
        let job_id = task.job_id.clone();
        tracing::info!(%job_id, plugin = %task.plugin_id, task = %task.task_name, attempt = task.attempt, "task leased");
        let cancel = Arc::new(AtomicBool::new(false));
        let lost = Arc::new(AtomicBool::new(false));
        let log = Arc::new(PendingLog::default());

        let heartbeat = AbortOnDrop(tokio::spawn(heartbeat_loop(
            self.client.clone(),
            task.clone(),
            self.worker_id.clone(),
            cancel.clone(),
            lost.clone(),
        )));
        let (stop_tx, mut stop_rx) = watch::channel(false);
        let mut shipper = LogShipper {
            client: self.client.clone(),
            job_id: job_id.clone(),
            offset: task.log_offset,
            unsent: Vec::new(),
            dead: false,
        };
        let flusher_log = log.clone();
        let mut flusher = AbortOnDrop(tokio::spawn(async move {
            loop {
                tokio::select! {
                    _ = tokio::time::sleep(LOG_FLUSH_INTERVAL) => shipper.flush(&flusher_log).await,
                    _ = stop_rx.changed() => break,
                }
            }
            shipper
        }));

        let outcome = self.execute(&task, cancel.clone(), log.clone()).await;
        drop(heartbeat);
        let _ = stop_tx.send(true);
        let mut shipper = (&mut flusher.0).await.expect("log flusher panicked");

        if lost.load(Ordering::SeqCst) {
            tracing::warn!(%job_id, "lease lost, abandoning task");
            self.counters.abandoned.fetch_add(1, Ordering::SeqCst);
            return;
        }
        shipper.flush(&log).await;
        if !shipper.unsent.is_empty() {
            // one more try for logs that hit a transport error
            shipper.flush(&log).await;
        }

        let mut req = CompleteRequest {
            job_id: job_id.clone(),
            worker_id: self.worker_id.clone(),
            fencing_token: Some(task.fencing_token),
            outcome: OutcomeKind::Ok,
            result_b64: None,
            reason: None,
        };
        match &outcome {
            ExecutionOutcome::Ok(bytes) => req.result_b64 = Some(B64.encode(bytes)),
            ExecutionOutcome::Err(reason) => {
                req.outcome = OutcomeKind::Err;
                req.reason = Some(reason.clone());
            }
            ExecutionOutcome::Cancelled => req.outcome = OutcomeKind::Cancelled,
        }
        let mut delay = Duration::from_millis(200);
        loop {
            match self.client.complete(&req).await {
                Ok(resp) => {
                    tracing::info!(%job_id, outcome = outcome.name(), status = %resp.status, "task completed");
                    self.counters.completed.fetch_add(1, Ordering::SeqCst);
                    return;
                }
                Err(e) if e.is_transport() && delay < Duration::from_millis(task.lease_ms.max(1)) => {
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                }
                Err(e) => {
                    tracing::warn!(%job_id, error = %e, "completion rejected, abandoning task");
                    self.counters.abandoned.fetch_add(1, Ordering::SeqCst);
                    return;
                }
            }
        }
    }

    async fn execute(&self, task: &TaskDocument, cancel: Arc<AtomicBool>, log: Arc<PendingLog>) -> ExecutionOutcome {
        let Some(entry) = self.registry.get(&task.plugin_id) else {
            log.write(&format!("unknown plugin {}\n", task.plugin_id));
            return ExecutionOutcome::Err(format!("unknown plugin {}", task.plugin_id));
        };
        let input = match &task.input_ref {
            Some(r) => match self.client.blob(&r.blob_id).await {
                Ok(b) => b,
                Err(e) => return ExecutionOutcome::Err(format!("cannot fetch input: {e}")),
            },
            None => Vec::new(),
        };
        let artifact = match &task.model_artifact_ref {
            Some(r) => match self.client.blob(&r.blob_id).await {
                Ok(b) => Some(b),
                Err(e) => return ExecutionOutcome::Err(format!("cannot fetch model artifact: {e}")),
            },
            None => None,
        };
        match &entry.executor {
            Executor::Builtin(plugin) => {
                let plugin = plugin.clone();
                let task = task.clone();
                tokio::task::spawn_blocking(move || {
                    let input = TaskInput {
                        kind: task.kind,
                        task_name: &task.task_name,
                        input: &input,
                        model_artifact: artifact.as_deref(),
                        params: &task.params,
                    };
                    let ctx = TaskContext {
                        cancel: cancel.as_ref(),
                        log: log.as_ref(),
                    };
                    run_plugin(plugin.as_ref(), &input, &ctx)
                })
                .await
                .unwrap_or_else(|e| ExecutionOutcome::Err(format!("plugin thread failed: {e}")))
            }
            Executor::External { url } => {
                log.write(&format!("forwarding to {url}\n"));
                let req = ExternalRequest {
                    task: task.clone(),
                    input_b64: B64.encode(&input),
                    model_artifact_b64: artifact.map(|a| B64.encode(a)),
                };
                let http = reqwest::Client::new();
                tokio::select! {
                    out = forward_external(&http, url, &req, self.external_timeout) => {
                        if let ExecutionOutcome::Err(reason) = &out {
                            log.write(&format!("error: {reason}\n"));
                        }
                        out
                    }
                    _ = wait_for(&cancel) => {
                        log.write("cancelled\n");
                        ExecutionOutcome::Cancelled
                    }
                }
            }
        }
    }
}

async fn wait_for(flag: &AtomicBool) {
    while !flag.load(Ordering::SeqCst) {
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
}

async fn heartbeat_loop(
    client: ApiClient,
    task: TaskDocument,
    worker_id: String,
    cancel: Arc<AtomicBool>,
    lost: Arc<AtomicBool>,
) {
    let interval = Duration::from_millis((task.lease_ms / 3).max(10));
    loop {
        tokio::time::sleep(interval).await;
        match client.heartbeat(&task.job_id, &worker_id, task.fencing_token).await {
            Ok(reply) => {
                if reply.cancel_requested {
                    cancel.store(true, Ordering::SeqCst);
                }
            }
            Err(e) if e.is_transport() => tracing::debug!(error = %e, "heartbeat failed"),
            Err(e) => {
                tracing::warn!(job_id = %task.job_id, error = %e, "lease lost");
                lost.store(true, Ordering::SeqCst);
                cancel.store(true, Ordering::SeqCst);
                return;
            }
        }
    }
}

/// POSTs the task document to an external plugin server and relays the body.
pub async fn forward_external(
    http: &reqwest::Client,
    url: &str,
    req: &ExternalRequest,
    timeout: Duration,
) -> ExecutionOutcome {
    let sent = http.post(url).timeout(timeout).json(req).send().await;
    let resp = match sent {
        Ok(r) => r,
        Err(e) if e.is_timeout() => {
            return ExecutionOutcome::Err(format!("external server timed out after {} s", timeout.as_secs_f64()))
        }
        Err(e) if e.is_connect() => return ExecutionOutcome::Err(format!("connection to {url} failed: {e}")),
        Err(e) => return ExecutionOutcome::Err(format!("external request failed: {e}")),
    };
    let status = resp.status();
    if !status.is_success() {
        return ExecutionOutcome::Err(format!("external server status {}", status.as_u16()));
    }
    match resp.bytes().await {
        Ok(body) => ExecutionOutcome::Ok(body.to_vec()),
        Err(e) if e.is_timeout() => {
            ExecutionOutcome::Err(format!("external server timed out after {} s", timeout.as_secs_f64()))
        }
        Err(e) => ExecutionOutcome::Err(format!("malformed external response: {e}")),
    }
}
