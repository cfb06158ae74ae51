#![allow(dead_code)]

use std::time::Duration;

use annolab_core::domain::Role;
use annolab_service::wire::{CreateUserRequest, PredictRequest};
use annolab_service::{start, ApiClient, RunningServer, ServeOptions, ServiceConfig};

pub const POLL: Duration = Duration::from_millis(50);

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub server: RunningServer,
    pub admin: ApiClient,
}

pub struct Setup {
    pub inline_worker: bool,
    pub lease_ms: u64,
    pub plugins_dir: Option<std::path::PathBuf>,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            inline_worker: true,
            lease_ms: 3_000,
            plugins_dir: None,
        }
    }
}

pub async fn harness(setup: Setup) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::new(dir.path().join("data"));
    config.lease_ms = setup.lease_ms;
    config.fsync = false;
    config.plugins_dir = setup.plugins_dir;
    let mut opts = ServeOptions::new(config, "127.0.0.1:0");
    opts.bootstrap_admin = Some(("admin".into(), "admin-pw".into()));
    opts.inline_worker = setup.inline_worker;
    opts.sweep_interval = Duration::from_millis(100);
    let server = start(opts).await.unwrap();
    let anon = ApiClient::new(&server.url(), None);
    let token = anon.login("admin", "admin-pw").await.unwrap().token;
    Harness {
        dir,
        admin: anon.with_token(token),
        server,
    }
}

impl Harness {
    pub fn anon(&self) -> ApiClient {
        ApiClient::new(&self.server.url(), None)
    }

    pub async fn user(&self, name: &str, role: Role) -> ApiClient {
        self.admin
            .create_user(&CreateUserRequest {
                username: name.into(),
                password: format!("{name}-pw"),
                display_name: None,
                role: Some(role),
            })
            .await
            .unwrap();
        let token = self.anon().login(name, &format!("{name}-pw")).await.unwrap().token;
        self.anon().with_token(token)
    }
}

pub fn text(s: &str) -> PredictRequest {
    PredictRequest {
        inline_input: Some(s.into()),
        ..Default::default()
    }
}

pub async fn wait_for<F: Fn() -> Fut, Fut: std::future::Future<Output = bool>>(what: &str, f: F) {
    let deadline = tokio::time::Instant::now() + Duration::from_secs(20);
    while !f().await {
        assert!(tokio::time::Instant::now() < deadline, "timed out waiting for {what}");
        tokio::time::sleep(POLL).await;
    }
}

pub fn pairs_jsonl(pairs: &[(&str, &str)]) -> Vec<u8> {
    pairs
        .iter()
        .map(|(s, t)| serde_json::json!({"source": s, "target": t}).to_string() + "\n")
        .collect::<String>()
        .into_bytes()
}

pub async fn finish(c: &ApiClient, job: &str) -> annolab_core::domain::Job {
    tokio::time::timeout(Duration::from_secs(30), c.wait_job(job, POLL))
        .await
        .unwrap_or_else(|_| panic!("job {job} did not finish"))
        .unwrap()
}

pub async fn trained(c: &ApiClient, model: &annolab_core::domain::ModelId) -> annolab_service::wire::ModelView {
    tokio::time::timeout(Duration::from_secs(30), c.wait_model(model, POLL))
        .await
        .unwrap_or_else(|_| panic!("model {model} did not finish training"))
        .unwrap()
}
