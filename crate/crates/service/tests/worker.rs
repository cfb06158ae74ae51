mod common;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use annolab_core::domain::{DatasetFormat, JobStatus, Role, MANIFEST_FILE_NAME};
use annolab_core::plugins::PluginRegistry;
use annolab_service::wire::{CompleteRequest, ExternalRequest, OutcomeKind};
use annolab_service::{run_worker, ApiClient, WorkerConfig, WorkerError, WorkerStats};
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;
use common::*;
use tokio::sync::watch;

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

async fn worker_client(h: &Harness) -> ApiClient {
    h.user("node", Role::Worker).await
}

fn config(h: &Harness, token: &str, id: &str, queues: &[&str]) -> WorkerConfig {
    let mut c = WorkerConfig::new(h.server.url(), token, queues.iter().map(|q| q.to_string()).collect());
    c.worker_id = id.into();
    c.poll_interval = Duration::from_millis(50);
    c.backoff_cap = Duration::from_millis(200);
    c
}

struct RunningWorker {
    stop: watch::Sender<bool>,
    handle: tokio::task::JoinHandle<Result<WorkerStats, WorkerError>>,
}

impl RunningWorker {
    fn spawn(config: WorkerConfig, registry: PluginRegistry) -> Self {
        let (stop, rx) = watch::channel(false);
        let handle = tokio::spawn(run_worker(config, Arc::new(registry), rx));
        Self { stop, handle }
    }

    async fn stop(self) -> WorkerStats {
        self.stop.send(true).unwrap();
        self.handle.await.unwrap().unwrap()
    }
}

#[tokio::test]
async fn protocol_by_hand() {
    let h = harness(Setup { inline_worker: false, ..Setup::default() }).await;
    let alice = h.user("alice", Role::User).await;
    let w = worker_client(&h).await;
    assert!(w.lease("w1", &["cpu-light".into()]).await.unwrap().is_none());

    let job = alice.predict("mdl-base-stub-translate", &text("hola")).await.unwrap().job_id;
    assert!(w.lease("w1", &["gpu".into()]).await.unwrap().is_none());
    let task = w.lease("w1", &["cpu-light".into()]).await.unwrap().unwrap();
    assert_eq!(task.job_id, job);
    assert_eq!(task.attempt, 1);
    assert_eq!(task.log_offset, 0);
    assert_eq!(w.blob(&task.input_ref.as_ref().unwrap().blob_id).await.unwrap(), b"hola");
    assert_eq!(alice.job(job.as_str()).await.unwrap().status, JobStatus::Running);

    assert!(!w.heartbeat(&job, "w1", task.fencing_token).await.unwrap().cancel_requested);
    let e = w.heartbeat(&job, "w2", task.fencing_token).await.unwrap_err();
    assert_eq!(e.code(), Some("lease_lost"));
    let e = w.heartbeat(&job, "w1", task.fencing_token + 1).await.unwrap_err();
    assert_eq!(e.code(), Some("lease_lost"));

    assert_eq!(w.append_log(&job, 0, b"first\n").await.unwrap(), 6);
    let e = w.append_log(&job, 0, b"again\n").await.unwrap_err();
    assert_eq!(e.code(), Some("log_gap"));
    assert_eq!(w.append_log(&job, 6, b"second\n").await.unwrap(), 13);
    let logs = alice.logs(job.as_str(), 6).await.unwrap();
    assert_eq!(B64.decode(logs.payload_b64).unwrap(), b"second\n");
    assert!(!logs.finished);

    alice.cancel(job.as_str()).await.unwrap();
    assert!(w.heartbeat(&job, "w1", task.fencing_token).await.unwrap().cancel_requested);
    let done = w
        .complete(&CompleteRequest {
            job_id: job.clone(),
            worker_id: "w1".into(),
            fencing_token: Some(task.fencing_token),
            outcome: OutcomeKind::Cancelled,
            result_b64: None,
            reason: None,
        })
        .await
        .unwrap();
    assert_eq!(done.status, JobStatus::Cancelled);
    let logs = alice.logs(job.as_str(), 0).await.unwrap();
    assert!(logs.finished);
    assert_eq!(B64.decode(logs.payload_b64).unwrap(), b"first\nsecond\n");
    let e = w.append_log(&job, 13, b"late\n").await.unwrap_err();
    assert_eq!(e.code(), Some("lease_lost"));

    // restart keeps appending to the same log
    alice.restart(job.as_str()).await.unwrap();
    let task = w.lease("w1", &["cpu-light".into()]).await.unwrap().unwrap();
    assert_eq!((task.attempt, task.log_offset), (1, 13));
    let done = w
        .complete(&CompleteRequest {
            job_id: job.clone(),
            worker_id: "w1".into(),
            fencing_token: Some(task.fencing_token),
            outcome: OutcomeKind::Ok,
            result_b64: Some(B64.encode("hi")),
            reason: None,
        })
        .await
        .unwrap();
    assert_eq!(done.status, JobStatus::Succeeded);
    assert_eq!(alice.result(job.as_str()).await.unwrap(), b"hi");
    h.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn crashed_worker_is_replaced() {
    let h = harness(Setup {
        inline_worker: false,
        lease_ms: 400,
        ..Setup::default()
    })
    .await;
    let alice = h.user("alice", Role::User).await;
    let w = worker_client(&h).await;
    let job = alice.predict("mdl-base-stub-translate", &text("hola")).await.unwrap().job_id;
    // this worker takes the job and dies
    let dead = w.lease("dead", &["cpu-light".into()]).await.unwrap().unwrap();

    let worker = RunningWorker::spawn(config(&h, w.token().unwrap(), "alive", &["cpu-light"]), PluginRegistry::builtin());
    let done = finish(&alice, job.as_str()).await;
    assert_eq!(done.status, JobStatus::Succeeded);
    assert_eq!(done.attempt, 2);
    let stats = worker.stop().await;
    assert_eq!((stats.leased, stats.completed), (1, 1));

    let e = w
        .complete(&CompleteRequest {
            job_id: job.clone(),
            worker_id: "dead".into(),
            fencing_token: Some(dead.fencing_token),
            outcome: OutcomeKind::Ok,
            result_b64: Some(B64.encode("stale")),
            reason: None,
        })
        .await
        .unwrap_err();
    assert_eq!(e.code(), Some("lease_lost"));
    assert_eq!(alice.result(job.as_str()).await.unwrap(), b"hola");
    h.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn aborted_worker_task_is_recovered() {
    let (h, _ext, plugins) = external_harness().await;
    let alice = h.user("alice", Role::User).await;
    let w = worker_client(&h).await;
    let registry = PluginRegistry::discover(plugins.path()).unwrap();
    let slow = alice
        .predict("mdl-base-slow", &with_params(text("x"), serde_json::json!({"sleep_ms": 1500})))
        .await
        .unwrap()
        .job_id;
    let first = RunningWorker::spawn(config(&h, w.token().unwrap(), "first", &["ext"]), registry.clone());
    wait_for("slow job running", || async { alice.job(slow.as_str()).await.unwrap().status == JobStatus::Running }).await;
    // killed mid-task: no completion, no more heartbeats
    first.handle.abort();

    let second = RunningWorker::spawn(config(&h, w.token().unwrap(), "second", &["ext"]), registry);
    let done = finish(&alice, slow.as_str()).await;
    assert_eq!(done.status, JobStatus::Succeeded);
    assert_eq!(done.attempt, 2);
    assert_eq!(second.stop().await.completed, 1);
    assert_eq!(alice.result(slow.as_str()).await.unwrap(), b"x");
    h.server.shutdown().await.unwrap();
}

fn with_params(mut req: annolab_service::wire::PredictRequest, params: serde_json::Value) -> annolab_service::wire::PredictRequest {
    req.params = params;
    req
}

fn write_manifest(dir: &Path, id: &str, url: &str) {
    let manifest = serde_json::json!({
        "plugin_id": id,
        "version": "0.1.0",
        "execution": {"external": {"url": url}},
        "tasks": [{"task_name": "run", "kind": "predict", "input_kind": "text_lines",
                   "output_kind": "text_lines", "queue_class": "ext",
                   "supports_finetune": false, "languages": ["*"]}]
    });
    std::fs::create_dir_all(dir.join(id)).unwrap();
    std::fs::write(dir.join(id).join(MANIFEST_FILE_NAME), manifest.to_string()).unwrap();
}

#[derive(Default)]
struct Load {
    current: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

struct ExternalServer {
    url: String,
    load: Arc<Load>,
}

impl ExternalServer {
    async fn start() -> Self {
        let load = Arc::new(Load::default());
        let l = load.clone();
        let app = Router::new()
            .route(
                "/echo",
                post(|Json(req): Json<ExternalRequest>| async move { B64.decode(req.input_b64).unwrap() }),
            )
            .route(
                "/fail",
                post(|| async { (axum::http::StatusCode::INTERNAL_SERVER_ERROR, "boom") }),
            )
            .route(
                "/slow",
                post(move |Json(req): Json<ExternalRequest>| {
                    let l = l.clone();
                    async move {
                        l.calls.fetch_add(1, Ordering::SeqCst);
                        let now = l.current.fetch_add(1, Ordering::SeqCst) + 1;
                        l.peak.fetch_max(now, Ordering::SeqCst);
                        let ms = req.task.params["sleep_ms"].as_u64().unwrap_or(300);
                        tokio::time::sleep(Duration::from_millis(ms)).await;
                        l.current.fetch_sub(1, Ordering::SeqCst);
                        B64.decode(req.input_b64).unwrap()
                    }
                }),
            );
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        Self { url, load }
    }
}

async fn external_harness() -> (Harness, ExternalServer, tempfile::TempDir) {
    let ext = ExternalServer::start().await;
    let plugins = tempfile::tempdir().unwrap();
    write_manifest(plugins.path(), "echo", &format!("{}/echo", ext.url));
    write_manifest(plugins.path(), "broken", &format!("{}/fail", ext.url));
    write_manifest(plugins.path(), "slow", &format!("{}/slow", ext.url));
    // nothing listens on port 9
    write_manifest(plugins.path(), "gone", "http://127.0.0.1:9/run");
    let h = harness(Setup {
        inline_worker: false,
        lease_ms: 600,
        plugins_dir: Some(plugins.path().to_owned()),
    })
    .await;
    (h, ext, plugins)
}

#[tokio::test]
async fn external_forwarding() {
    let (h, _ext, plugins) = external_harness().await;
    let alice = h.user("alice", Role::User).await;
    let w = worker_client(&h).await;
    let worker = RunningWorker::spawn(
        config(&h, w.token().unwrap(), "ext-1", &["ext"]),
        PluginRegistry::discover(plugins.path()).unwrap(),
    );

    let echo = alice.predict("mdl-base-echo", &text("echo me")).await.unwrap().job_id;
    let broken = alice.predict("mdl-base-broken", &text("x")).await.unwrap().job_id;
    let gone = alice.predict("mdl-base-gone", &text("x")).await.unwrap().job_id;

    let done = finish(&alice, echo.as_str()).await;
    assert_eq!(done.status, JobStatus::Succeeded);
    assert_eq!(alice.result(echo.as_str()).await.unwrap(), b"echo me");

    let done = finish(&alice, broken.as_str()).await;
    assert_eq!(done.status, JobStatus::Failed);
    assert_eq!(done.attempt, 3);
    assert!(done.failure_reason.as_deref().unwrap().contains("external server status 500"), "{done:?}");
    let logs = alice.logs(broken.as_str(), 0).await.unwrap();
    let text = String::from_utf8(B64.decode(logs.payload_b64).unwrap()).unwrap();
    assert_eq!(text.matches("external server status 500").count(), 3, "{text}");

    let done = finish(&alice, gone.as_str()).await;
    assert_eq!(done.status, JobStatus::Failed);
    assert!(done.failure_reason.as_deref().unwrap().contains("connection"), "{done:?}");
    worker.stop().await;
    h.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn parallelism_is_bounded() {
    let (h, ext, plugins) = external_harness().await;
    let alice = h.user("alice", Role::User).await;
    let w = worker_client(&h).await;
    let mut jobs = Vec::new();
    for i in 0..5 {
        jobs.push(alice.predict("mdl-base-slow", &text(&format!("job {i}"))).await.unwrap().job_id);
    }
    let worker = RunningWorker::spawn(
        config(&h, w.token().unwrap(), "ext-1", &["ext"]),
        PluginRegistry::discover(plugins.path()).unwrap(),
    );
    for (i, j) in jobs.iter().enumerate() {
        let done = finish(&alice, j.as_str()).await;
        assert_eq!(done.status, JobStatus::Succeeded);
        assert_eq!(alice.result(j.as_str()).await.unwrap(), format!("job {i}").as_bytes());
    }
    let stats = worker.stop().await;
    assert_eq!(stats.completed, 5);
    assert_eq!(stats.peak_in_flight, 2);
    assert_eq!(ext.load.peak.load(Ordering::SeqCst), 2);
    assert_eq!(ext.load.calls.load(Ordering::SeqCst), 5);
    h.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn cancel_reaches_running_external_task() {
    let (h, _ext, plugins) = external_harness().await;
    let alice = h.user("alice", Role::User).await;
    let w = worker_client(&h).await;
    let worker = RunningWorker::spawn(
        config(&h, w.token().unwrap(), "ext-1", &["ext"]),
        PluginRegistry::discover(plugins.path()).unwrap(),
    );
    let job = alice
        .predict("mdl-base-slow", &with_params(text("x"), serde_json::json!({"sleep_ms": 20_000})))
        .await
        .unwrap()
        .job_id;
    wait_for("job running", || async { alice.job(job.as_str()).await.unwrap().status == JobStatus::Running }).await;
    let t = Instant::now();
    alice.cancel(job.as_str()).await.unwrap();
    let done = finish(&alice, job.as_str()).await;
    assert_eq!(done.status, JobStatus::Cancelled);
    assert!(t.elapsed() < Duration::from_secs(2), "{:?}", t.elapsed());
    worker.stop().await;
    h.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn cancel_reaches_running_builtin_task() {
    let h = harness(Setup { lease_ms: 600, ..Setup::default() }).await;
    let alice = h.user("alice", Role::User).await;
    let pairs: Vec<(String, String)> = (0..20)
        .map(|i| (format!("tbe qnick fox {i} jnmps"), format!("the quick fox {i} jumps")))
        .collect();
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let ds = alice
        .upload_dataset(DatasetFormat::TextPairsJsonl, "train", pairs_jsonl(&refs))
        .await
        .unwrap();
    let ft = alice.finetune("mdl-base-postcorrect", &ds.dataset_id, serde_json::Value::Null).await.unwrap();
    trained(&alice, &ft.new_model_id).await;
    let page: String = (0..40_000).map(|i| format!("tbe qnick brown fox {i} jnmps ovcr the lazy dog\n")).collect();
    let job = alice.predict(ft.new_model_id.as_str(), &text(&page)).await.unwrap().job_id;
    wait_for("job running", || async { alice.job(job.as_str()).await.unwrap().status == JobStatus::Running }).await;
    let t = Instant::now();
    alice.cancel(job.as_str()).await.unwrap();
    let done = finish(&alice, job.as_str()).await;
    assert_eq!(done.status, JobStatus::Cancelled, "{done:?}");
    assert!(t.elapsed() < Duration::from_secs(3), "{:?}", t.elapsed());
    let logs = alice.logs(job.as_str(), 0).await.unwrap();
    let text = String::from_utf8(B64.decode(logs.payload_b64).unwrap()).unwrap();
    assert!(logs.finished);
    assert!(text.ends_with("cancelled\n"), "{text}");
    h.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn wrong_queue_class_never_leases() {
    let h = harness(Setup { inline_worker: false, ..Setup::default() }).await;
    let alice = h.user("alice", Role::User).await;
    let w = worker_client(&h).await;
    let job = alice.predict("mdl-base-stub-translate", &text("x")).await.unwrap().job_id;
    let worker = RunningWorker::spawn(config(&h, w.token().unwrap(), "gpu-1", &["gpu"]), PluginRegistry::builtin());
    tokio::time::sleep(Duration::from_millis(500)).await;
    let stats = worker.stop().await;
    assert_eq!(stats.leased, 0);
    assert_eq!(alice.job(job.as_str()).await.unwrap().status, JobStatus::Queued);
    h.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn invalid_token_stops_worker() {
    let h = harness(Setup { inline_worker: false, ..Setup::default() }).await;
    let (_tx, rx) = watch::channel(false);
    let err = run_worker(config(&h, "not-a-token", "w", &["cpu-light"]), Arc::new(PluginRegistry::builtin()), rx)
        .await
        .unwrap_err();
    assert!(matches!(err, WorkerError::InvalidToken), "{err}");

    let mut bad = config(&h, "t", "w", &[]);
    let (_tx, rx) = watch::channel(false);
    assert!(matches!(
        run_worker(bad.clone(), Arc::new(PluginRegistry::builtin()), rx).await,
        Err(WorkerError::Config(_))
    ));
    bad.queues = vec!["cpu-light".into()];
    bad.parallelism = 0;
    assert!(bad.validate().is_err());
    h.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn unreachable_server_is_retried() {
    // grab a free port, then release it so nothing listens there yet
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut c = WorkerConfig::new(format!("http://127.0.0.1:{port}"), "t", vec!["cpu-light".into()]);
    c.poll_interval = Duration::from_millis(20);
    c.backoff_cap = Duration::from_millis(100);
    let (tx, rx) = watch::channel(false);
    let handle = tokio::spawn(run_worker(c, Arc::new(PluginRegistry::builtin()), rx));
    tokio::time::sleep(Duration::from_millis(400)).await;
    assert!(!handle.is_finished());
    tx.send(true).unwrap();
    assert_eq!(handle.await.unwrap().unwrap().leased, 0);
}
