use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use annolab_core::domain::{
    lineage_chain, AuthToken, Clock, Job, JobKind, JobStatus, ModelId, ModelRecord, ModelStatus, Role, SystemClock,
    UserAccount, UserId, Visibility,
};
use annolab_core::plugins::PluginRegistry;
use annolab_core::queue::{JobPersistence, TaskQueue, DEFAULT_LEASE_MS};
use annolab_core::store::{EntityKind, ListFilter, Store, StoreError, StoreOptions};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Owner of the seeded base models. No account has this id, so nobody can
/// mutate them.
pub const SYSTEM_USER: &str = "usr-system";

pub fn base_model_id(plugin_id: &str) -> ModelId {
    ModelId(format!("mdl-base-{plugin_id}"))
}

#[derive(Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub lease_ms: u64,
    /// Extra plugin manifests; the built-ins are always present.
    pub plugins_dir: Option<PathBuf>,
    pub clock: Arc<dyn Clock>,
    pub fsync: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            lease_ms: DEFAULT_LEASE_MS,
            plugins_dir: None,
            clock: Arc::new(SystemClock),
            fsync: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("cannot open data directory: {0}")]
    Store(#[from] StoreError),
    #[error("cannot read plugins directory: {0}")]
    Plugins(std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    user_id: UserId,
    created_at: u64,
}

struct StorePersistence(Arc<Store>);

impl JobPersistence for StorePersistence {
    fn persist(&self, job: &Job) -> Result<(), String> {
        self.0
            .put(EntityKind::Job, job.job_id.as_str(), None, job)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}

pub struct AppState {
    pub store: Arc<Store>,
    pub queue: TaskQueue,
    pub registry: PluginRegistry,
    pub clock: Arc<dyn Clock>,
    pub lease_ms: u64,
    user_lock: Mutex<()>,
}

impl AppState {
    /// Opens the data directory, restores the queue, seeds base models and
    /// repairs model states left behind by a crash.
    pub fn open(config: &ServiceConfig) -> Result<Arc<Self>, StartupError> {
        let store = Arc::new(Store::open_with(
            &config.data_dir,
            StoreOptions {
                fsync: config.fsync,
                ..Default::default()
            },
        )?);
        let jobs: Vec<Job> = store.list_as(EntityKind::Job, &ListFilter::default())?;
        let queue = TaskQueue::restore(config.lease_ms, Box::new(StorePersistence(store.clone())), jobs);
        let registry = match &config.plugins_dir {
            Some(dir) => PluginRegistry::discover(dir).map_err(StartupError::Plugins)?,
            None => PluginRegistry::builtin(),
        };
        let state = Arc::new(Self {
            store,
            queue,
            registry,
            clock: config.clock.clone(),
            lease_ms: config.lease_ms,
            user_lock: Mutex::new(()),
        });
        state.seed_base_models()?;
        state.reconcile_models()?;
        let swept = state.store.sweep_orphan_blobs()?;
        if !swept.is_empty() {
            tracing::info!(count = swept.len(), "removed unreferenced blobs");
        }
        Ok(state)
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    fn seed_base_models(&self) -> Result<(), StoreError> {
        for manifest in self.registry.manifests() {
            let Some(predict) = manifest.tasks.iter().find(|t| t.kind == JobKind::Predict) else {
                continue;
            };
            let id = base_model_id(&manifest.plugin_id);
            if self.store.get(EntityKind::Model, id.as_str()).is_ok() {
                continue;
            }
            let record = ModelRecord {
                model_id: id.clone(),
                owner: UserId::from(SYSTEM_USER),
                plugin_id: manifest.plugin_id.clone(),
                task_name: predict.task_name.clone(),
                parent_model_id: None,
                dataset_ids: Vec::new(),
                visibility: Visibility::Public,
                status: ModelStatus::Ready,
                artifact: None,
                created_at: self.now(),
            };
            self.store.put(EntityKind::Model, id.as_str(), Some(0), &record)?;
            tracing::info!(model_id = %id, "seeded base model");
        }
        Ok(())
    }

    /// Brings every training model in line with its newest train job.
    fn reconcile_models(&self) -> Result<(), StoreError> {
        let models: Vec<ModelRecord> = self.store.list_as(EntityKind::Model, &ListFilter::default())?;
        for m in models.into_iter().filter(|m| m.status == ModelStatus::Training) {
            match self.store.training_jobs(m.model_id.as_str())?.first() {
                Some(job) => self.sync_model(job)?,
                None => {
                    tracing::warn!(model_id = %m.model_id, "training model has no train job; marking failed");
                    self.set_model_status(&m.model_id, ModelStatus::Failed, None)?;
                }
            }
        }
        Ok(())
    }

    /// Mirrors a train job's status onto the model it produces.
    pub fn sync_model(&self, job: &Job) -> Result<(), StoreError> {
        if job.kind != JobKind::Train {
            return Ok(());
        }
        let Some(model_id) = &job.model_id else {
            return Ok(());
        };
        let (status, artifact) = match job.status {
            JobStatus::Succeeded => (ModelStatus::Ready, job.result.clone()),
            JobStatus::Failed | JobStatus::Cancelled => (ModelStatus::Failed, None),
            JobStatus::Queued | JobStatus::Running => (ModelStatus::Training, None),
        };
        self.set_model_status(model_id, status, artifact)
    }

    fn set_model_status(
        &self,
        model_id: &ModelId,
        status: ModelStatus,
        artifact: Option<annolab_core::domain::BlobRef>,
    ) -> Result<(), StoreError> {
        for _ in 0..8 {
            let (mut model, version) = match self.store.get_as::<ModelRecord>(EntityKind::Model, model_id.as_str()) {
                Ok(found) => found,
                Err(e) if e.is_not_found() => return Ok(()),
                Err(e) => return Err(e),
            };
            if model.status == status && (artifact.is_none() || model.artifact == artifact) {
                return Ok(());
            }
            model.status = status;
            if artifact.is_some() {
                model.artifact = artifact.clone();
            }
            match self.store.put(EntityKind::Model, model_id.as_str(), Some(version), &model) {
                Err(StoreError::VersionConflict { .. }) => continue,
                other => return other.map(|_| ()),
            }
        }
        Err(StoreError::VersionConflict {
            kind: EntityKind::Model,
            id: model_id.to_string(),
            expected: 0,
            found: 0,
        })
    }

    pub fn find_user(&self, username: &str) -> Result<Option<UserAccount>, StoreError> {
        let users: Vec<UserAccount> = self.store.list_as(EntityKind::User, &ListFilter::default())?;
        Ok(users.into_iter().find(|u| u.username == username))
    }

    pub fn create_user(
        &self,
        username: &str,
        password: &str,
        role: Role,
        display_name: Option<String>,
    ) -> Result<UserAccount, ApiError> {
        let valid = !username.is_empty()
            && username.len() <= 64
            && username.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b));
        if !valid {
            return Err(ApiError::bad_request("username must be 1-64 characters of [A-Za-z0-9._-]"));
        }
        if password.is_empty() {
            return Err(ApiError::bad_request("password must not be empty"));
        }
        let _g = self.user_lock.lock();
        if self.find_user(username)?.is_some() {
            return Err(ApiError::conflict("conflict", format!("username {username:?} is taken")));
        }
        let mut account = UserAccount::new(username, password, role, self.now());
        if let Some(d) = display_name {
            account.display_name = d;
        }
        self.store
            .put(EntityKind::User, account.user_id.as_str(), Some(0), &account)?;
        Ok(account)
    }

    /// Creates the admin account unless the username already exists.
    pub fn ensure_admin(&self, username: &str, password: &str) -> Result<(), ApiError> {
        if self.find_user(username)?.is_none() {
            self.create_user(username, password, Role::Admin, None)?;
            tracing::info!(username, "created bootstrap admin");
        }
        Ok(())
    }

    pub fn issue_token(&self, user: &UserAccount) -> Result<AuthToken, StoreError> {
        let token = AuthToken::generate();
        let rec = TokenRecord {
            user_id: user.user_id.clone(),
            created_at: self.now(),
        };
        self.store.put(EntityKind::Token, &token.digest(), Some(0), &rec)?;
        Ok(token)
    }

    pub fn user_for_token(&self, token: &AuthToken) -> Result<Option<UserAccount>, StoreError> {
        let rec: TokenRecord = match self.store.get_as(EntityKind::Token, &token.digest()) {
            Ok((rec, _)) => rec,
            Err(e) if e.is_not_found() => return Ok(None),
            Err(e) => return Err(e),
        };
        match self.store.get_as::<UserAccount>(EntityKind::User, rec.user_id.as_str()) {
            Ok((user, _)) => Ok(Some(user)),
            Err(e) if e.is_not_found() => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Account used by a worker running inside the server process.
    pub fn inline_worker_token(&self) -> Result<AuthToken, ApiError> {
        let name = "inline-worker";
        let user = match self.find_user(name)? {
            Some(u) => u,
            None => {
                let password = AuthToken::generate();
                self.create_user(name, password.as_str(), Role::Worker, None)?
            }
        };
        Ok(self.issue_token(&user)?)
    }

    pub fn all_models(&self) -> Result<HashMap<ModelId, ModelRecord>, StoreError> {
        Ok(self
            .store
            .list_as::<ModelRecord>(EntityKind::Model, &ListFilter::default())?
            .into_iter()
            .map(|m| (m.model_id.clone(), m))
            .collect())
    }

    pub fn lineage(&self, model_id: &ModelId) -> Result<Vec<ModelId>, String> {
        let all = self.all_models().map_err(|e| e.to_string())?;
        lineage_chain(model_id, &all).map_err(|e| e.to_string())
    }

    /// Applies lease expiry and mirrors the effect onto training models.
    pub fn expire_leases(&self) -> usize {
        let affected = self.queue.expire_leases(self.now());
        for (job_id, status) in &affected {
            tracing::info!(%job_id, %status, "lease expired");
            if let Some(job) = self.queue.get(job_id) {
                if let Err(e) = self.sync_model(&job) {
                    tracing::error!(%job_id, "model status update failed: {e}");
                }
            }
        }
        affected.len()
    }
}
