//! HTTP service, worker runtime and client for annolab.

pub mod api;
pub mod auth;
pub mod client;
pub mod error;
pub mod server;
pub mod state;
pub mod wire;
pub mod worker;

pub use error::ApiError;
pub use state::{AppState, ServiceConfig, StartupError};
pub use client::{ApiClient, ClientError};
pub use server::{start, RunningServer, ServeError, ServeOptions};
pub use worker::{run_worker, WorkerConfig, WorkerError, WorkerStats};
