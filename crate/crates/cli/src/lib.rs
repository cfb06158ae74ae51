//! The `annolab` binary: `serve`, `worker` and `client` subcommands.
//!
//! Exit codes: 0 ok, 1 transport or HTTP error, 2 usage, 3 job ended
//! failed or cancelled (and invalid worker token).

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use annolab_service::{ServeOptions, ServiceConfig, WorkerConfig, WorkerError};

mod client;

pub use client::ClientCommand;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_JOB_FAILED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "annolab", version, about = "Human-in-the-loop annotation backend")]
pub struct Cli {
    /// Tracing filter, e.g. `info` or `annolab_service=debug`.
    #[arg(long, global = true, env = "ANNOLAB_LOG")]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the API service.
    Serve(ServeArgs),
    /// Run a worker node against a server.
    Worker(WorkerArgs),
    /// Script the REST API.
    Client(ClientArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8077")]
    pub addr: String,
    /// USER:PASS of an admin account to create if it does not exist.
    #[arg(long)]
    pub bootstrap_admin: Option<String>,
    /// Run a worker inside the server process.
    #[arg(long)]
    pub inline_worker: bool,
    #[arg(long, default_value_t = 2)]
    pub inline_parallelism: usize,
    #[arg(long, default_value_t = annolab_core::queue::DEFAULT_LEASE_MS)]
    pub lease_ms: u64,
    #[arg(long)]
    pub plugins_dir: Option<PathBuf>,
    /// Skip fsync on journal writes (faster, not crash safe).
    #[arg(long)]
    pub no_fsync: bool,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    #[arg(long, env = "ANNOLAB_SERVER")]
    pub server: String,
    #[arg(long, env = "ANNOLAB_TOKEN", hide_env_values = true)]
    pub token: String,
    /// Comma-separated queue classes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub queues: Vec<String>,
    #[arg(long, default_value_t = 2)]
    pub parallelism: usize,
    #[arg(long)]
    pub plugins_dir: Option<PathBuf>,
    #[arg(long)]
    pub worker_id: Option<String>,
    #[arg(long, default_value_t = 500)]
    pub poll_ms: u64,
    #[arg(long, default_value_t = 120)]
    pub external_timeout_s: u64,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    #[arg(long, env = "ANNOLAB_SERVER", default_value = "http://127.0.0.1:8077")]
    pub server: String,
    #[arg(long, env = "ANNOLAB_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Print the raw API response.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: ClientCommand,
}

pub fn init_tracing(filter: Option<&str>) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter.unwrap_or("info"))
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub async fn run(cli: Cli) -> u8 {
    match cli.command {
        Command::Serve(args) => serve(args).await,
        Command::Worker(args) => worker(args).await,
        Command::Client(args) => client::run(args).await,
    }
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

async fn serve(args: ServeArgs) -> u8 {
    let mut config = ServiceConfig::new(&args.data_dir);
    config.lease_ms = args.lease_ms;
    config.plugins_dir = args.plugins_dir;
    config.fsync = !args.no_fsync;
    let mut opts = ServeOptions::new(config, args.addr);
    if let Some(spec) = args.bootstrap_admin {
        let Some((user, pass)) = spec.split_once(':') else {
            eprintln!("error: --bootstrap-admin expects USER:PASS");
            return EXIT_USAGE;
        };
        opts.bootstrap_admin = Some((user.to_owned(), pass.to_owned()));
    }
    opts.inline_worker = args.inline_worker;
    opts.inline_parallelism = args.inline_parallelism;
    let server = match annolab_service::start(opts).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    println!("annolab listening on {}", server.url());
    shutdown_signal().await;
    tracing::info!("shutting down");
    match server.shutdown().await {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

async fn worker(args: WorkerArgs) -> u8 {
    let mut config = WorkerConfig::new(args.server, args.token, args.queues);
    if let Some(id) = args.worker_id {
        config.worker_id = id;
    }
    config.parallelism = args.parallelism;
    config.plugins_dir = args.plugins_dir;
    config.poll_interval = Duration::from_millis(args.poll_ms.max(1));
    config.external_timeout = Duration::from_secs(args.external_timeout_s.max(1));
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let registry = match config.registry() {
        Ok(r) => Arc::new(r),
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let (tx, rx) = tokio::sync::watch::channel(false);
    tokio::spawn(async move {
        shutdown_signal().await;
        tracing::info!("finishing in-flight tasks");
        let _ = tx.send(true);
    });
    match annolab_service::run_worker(config, registry, rx).await {
        Ok(stats) => {
            tracing::info!(completed = stats.completed, abandoned = stats.abandoned, "worker exited");
            EXIT_OK
        }
        Err(WorkerError::InvalidToken) => {
            eprintln!("error: the server rejected the worker token");
            EXIT_JOB_FAILED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
