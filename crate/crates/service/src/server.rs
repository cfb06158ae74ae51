//! Running the API service, with the lease sweeper and an optional inline worker.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::api::{route_table, router};
use crate::error::ApiError;
use crate::state::{AppState, ServiceConfig, StartupError};
use crate::worker::{run_worker, WorkerConfig};

#[derive(Clone)]
pub struct ServeOptions {
    pub config: ServiceConfig,
    pub addr: String,
    /// `(username, password)` of an admin account created if missing.
    pub bootstrap_admin: Option<(String, String)>,
    pub inline_worker: bool,
    pub inline_parallelism: usize,
    pub sweep_interval: Duration,
}

impl ServeOptions {
    pub fn new(config: ServiceConfig, addr: impl Into<String>) -> Self {
        Self {
            config,
            addr: addr.into(),
            bootstrap_admin: None,
            inline_worker: false,
            inline_parallelism: 2,
            sweep_interval: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("cannot create the bootstrap admin: {0}")]
    Admin(ApiError),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

pub struct RunningServer {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: watch::Sender<bool>,
    stop_http: watch::Sender<bool>,
    server: JoinHandle<std::io::Result<()>>,
    background: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Lets the inline worker finish its tasks, then stops the HTTP server.
    pub async fn shutdown(self) -> Result<(), ServeError> {
        let _ = self.shutdown.send(true);
        for h in self.background {
            let _ = h.await;
        }
        let _ = self.stop_http.send(true);
        self.server.await.expect("server task panicked")?;
        Ok(())
    }

    /// Drops everything without a graceful stop, like a killed process.
    pub fn abort(self) {
        self.server.abort();
        for h in self.background {
            h.abort();
        }
    }
}

pub async fn start(opts: ServeOptions) -> Result<RunningServer, ServeError> {
    let listener = tokio::net::TcpListener::bind(&opts.addr)
        .await
        .map_err(|source| ServeError::Bind {
            addr: opts.addr.clone(),
            source,
        })?;
    let state = AppState::open(&opts.config)?;
    if let Some((user, pass)) = &opts.bootstrap_admin {
        state.ensure_admin(user, pass).map_err(ServeError::Admin)?;
    }
    let addr = listener.local_addr()?;
    tracing::info!(%addr, data_dir = %opts.config.data_dir.display(), "annolab listening");
    for r in route_table() {
        tracing::info!("route {:<6} {} ({})", r.method, r.path, r.auth);
    }

    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let (stop_http, mut stop) = watch::channel(false);
    let app = router(state.clone());
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stop.wait_for(|s| *s).await;
            })
            .await
    });

    let mut background = Vec::new();
    let sweeper_state = state.clone();
    let mut sweeper_stop = shutdown_rx.clone();
    let interval = opts.sweep_interval;
    background.push(tokio::spawn(async move {
        loop {
            tokio::select! {
                _ = tokio::time::sleep(interval) => {
                    let n = sweeper_state.expire_leases();
                    if n > 0 {
                        tracing::info!(count = n, "expired leases");
                    }
                }
                _ = sweeper_stop.wait_for(|s| *s) => break,
            }
        }
    }));

    if opts.inline_worker {
        let token = state.inline_worker_token().map_err(ServeError::Admin)?;
        let mut queues: Vec<String> = state
            .registry
            .manifests()
            .flat_map(|m| m.tasks.iter().map(|t| t.queue_class.clone()))
            .collect();
        queues.sort();
        queues.dedup();
        let mut config = WorkerConfig::new(format!("http://{addr}"), token.as_str(), queues);
        config.worker_id = "inline-worker".into();
        config.parallelism = opts.inline_parallelism.max(1);
        config.poll_interval = Duration::from_millis(100);
        let registry = Arc::new(state.registry.clone());
        let rx = shutdown_rx.clone();
        background.push(tokio::spawn(async move {
            if let Err(e) = run_worker(config, registry, rx).await {
                tracing::error!(error = %e, "inline worker stopped");
            }
        }));
    }

    Ok(RunningServer {
        addr,
        state,
        shutdown: shutdown_tx,
        stop_http,
        server,
        background,
    })
}
