//! Resource-classed FIFO job queue with leases, heartbeats, cooperative
//! cancellation and restart. Every operation takes the current time from the
//! caller so expiry is deterministic under a fake clock.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BlobRef, Job, JobEvent, JobId, JobStatus, Lease, Timestamp, TransitionError};

pub const DEFAULT_LEASE_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueueError {
    #[error("job {0} already exists")]
    Duplicate(JobId),
    #[error("job {0} not found")]
    UnknownJob(JobId),
    #[error("job {0} cannot be enqueued: {1}")]
    NotEnqueueable(JobId, &'static str),
    #[error("lease on job {0} is not held by this worker")]
    NotLeaseHolder(JobId),
    #[error("lease on job {0} has expired")]
    LeaseExpired(JobId),
    #[error(transparent)]
    InvalidState(#[from] TransitionError),
    #[error("persisting job {0} failed: {1}")]
    Persist(JobId, String),
}

/// Durable mirror of job state, called under the queue lock after every
/// mutation. A failure rolls the mutation back.
pub trait JobPersistence: Send + Sync {
    fn persist(&self, job: &Job) -> Result<(), String>;
}

pub struct NoPersistence;

impl JobPersistence for NoPersistence {
    fn persist(&self, _job: &Job) -> Result<(), String> {
        Ok(())
    }
}

/// Identifies the caller of heartbeat/complete. With a fencing token, a
/// worker that re-leased the same job cannot complete it from a stale run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseClaim {
    pub worker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fencing_token: Option<u64>,
}

impl LeaseClaim {
    pub fn worker(worker_id: impl Into<String>) -> Self {
        Self {
            worker_id: worker_id.into(),
            fencing_token: None,
        }
    }

    pub fn of(lease: &Lease) -> Self {
        Self {
            worker_id: lease.worker_id.clone(),
            fencing_token: Some(lease.fencing_token),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatReply {
    pub cancel_requested: bool,
    pub deadline: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    Ok(Option<BlobRef>),
    Err(String),
    Cancelled,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub queued: u64,
    pub running: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStats {
    pub by_class: BTreeMap<String, ClassCounts>,
    pub by_status: BTreeMap<JobStatus, u64>,
    pub total: u64,
}

type QueueKey = (Timestamp, JobId);

#[derive(Default)]
struct Inner {
    jobs: HashMap<JobId, Job>,
    queued: HashMap<String, BTreeSet<QueueKey>>,
    next_fence: u64,
}

impl Inner {
    fn index(&mut self, job: &Job) {
        if job.status == JobStatus::Queued {
            self.queued
                .entry(job.queue_class.clone())
                .or_default()
                .insert((job.submitted_at, job.job_id.clone()));
        }
    }

    fn unindex(&mut self, job: &Job) {
        if let Some(set) = self.queued.get_mut(&job.queue_class) {
            set.remove(&(job.submitted_at, job.job_id.clone()));
        }
    }
}

pub struct TaskQueue {
    inner: Mutex<Inner>,
    lease_ms: u64,
    persistence: Box<dyn JobPersistence>,
}

impl Default for TaskQueue {
    fn default() -> Self {
        Self::new(DEFAULT_LEASE_MS, Box::new(NoPersistence))
    }
}

impl TaskQueue {
    pub fn new(lease_ms: u64, persistence: Box<dyn JobPersistence>) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            lease_ms,
            persistence,
        }
    }

    /// Rebuilds the queue from persisted jobs, e.g. after a restart. Running
    /// jobs keep their leases and expire normally.
    pub fn restore(lease_ms: u64, persistence: Box<dyn JobPersistence>, jobs: impl IntoIterator<Item = Job>) -> Self {
        let queue = Self::new(lease_ms, persistence);
        {
            let mut inner = queue.inner.lock();
            for job in jobs {
                if let Some(l) = &job.lease {
                    inner.next_fence = inner.next_fence.max(l.fencing_token);
                }
                inner.index(&job);
                inner.jobs.insert(job.job_id.clone(), job);
            }
        }
        queue
    }

    pub fn lease_ms(&self) -> u64 {
        self.lease_ms
    }

    /// Runs `f` on the stored job; keeps the change only if it succeeds and
    /// persists.
    fn mutate<T>(
        &self,
        inner: &mut Inner,
        job_id: &JobId,
        f: impl FnOnce(&mut Job) -> Result<T, QueueError>,
    ) -> Result<T, QueueError> {
        let job = inner.jobs.get_mut(job_id).ok_or_else(|| QueueError::UnknownJob(job_id.clone()))?;
        let before = job.clone();
        let out = f(job)?;
        debug_assert!(job.check_invariants().is_ok(), "{:?}", job.check_invariants());
        if let Err(e) = self.persistence.persist(job) {
            *job = before;
            return Err(QueueError::Persist(job_id.clone(), e));
        }
        let after = job.clone();
        inner.unindex(&before);
        inner.index(&after);
        Ok(out)
    }

    pub fn enqueue(&self, job: Job) -> Result<(), QueueError> {
        if job.status != JobStatus::Queued {
            return Err(QueueError::NotEnqueueable(job.job_id, "status must be queued"));
        }
        if job.queue_class.is_empty() {
            return Err(QueueError::NotEnqueueable(job.job_id, "queue class is empty"));
        }
        let mut inner = self.inner.lock();
        if inner.jobs.contains_key(&job.job_id) {
            return Err(QueueError::Duplicate(job.job_id));
        }
        self.persistence
            .persist(&job)
            .map_err(|e| QueueError::Persist(job.job_id.clone(), e))?;
        inner.index(&job);
        inner.jobs.insert(job.job_id.clone(), job);
        Ok(())
    }

    /// Leases the oldest queued job of `queue_class`.
    pub fn lease(&self, queue_class: &str, worker_id: &str, now: Timestamp) -> Result<Option<Job>, QueueError> {
        self.lease_any(&[queue_class], worker_id, now)
    }

    /// Leases the oldest queued job across `classes`.
    pub fn lease_any<S: AsRef<str>>(
        &self,
        classes: &[S],
        worker_id: &str,
        now: Timestamp,
    ) -> Result<Option<Job>, QueueError> {
        let mut inner = self.inner.lock();
        let head = classes
            .iter()
            .filter_map(|c| inner.queued.get(c.as_ref()).and_then(|s| s.first()))
            .min()
            .cloned();
        let Some((_, job_id)) = head else {
            return Ok(None);
        };
        let fencing_token = inner.next_fence + 1;
        let lease = Lease {
            worker_id: worker_id.to_owned(),
            deadline: now + self.lease_ms,
            fencing_token,
        };
        let job = self.mutate(&mut inner, &job_id, |job| {
            job.apply(JobEvent::LeaseGranted(lease))?;
            Ok(job.clone())
        })?;
        inner.next_fence = fencing_token;
        Ok(Some(job))
    }

    /// Validates `claim` against the live lease. An overdue lease is expired
    /// on the spot.
    fn check_claim(&self, inner: &mut Inner, job_id: &JobId, claim: &LeaseClaim, now: Timestamp) -> Result<(), QueueError> {
        let job = inner.jobs.get(job_id).ok_or_else(|| QueueError::UnknownJob(job_id.clone()))?;
        let Some(lease) = &job.lease else {
            return Err(QueueError::NotLeaseHolder(job_id.clone()));
        };
        let token_ok = claim.fencing_token.is_none_or(|t| t == lease.fencing_token);
        if lease.worker_id != claim.worker_id || !token_ok {
            return Err(QueueError::NotLeaseHolder(job_id.clone()));
        }
        if lease.deadline < now {
            self.mutate(inner, job_id, |job| Ok(job.apply(JobEvent::LeaseExpired)?))?;
            return Err(QueueError::LeaseExpired(job_id.clone()));
        }
        Ok(())
    }

    pub fn heartbeat(&self, job_id: &JobId, claim: &LeaseClaim, now: Timestamp) -> Result<HeartbeatReply, QueueError> {
        let mut inner = self.inner.lock();
        self.check_claim(&mut inner, job_id, claim, now)?;
        let deadline = now + self.lease_ms;
        self.mutate(&mut inner, job_id, |job| {
            if let Some(l) = job.lease.as_mut() {
                l.deadline = deadline;
            }
            Ok(HeartbeatReply {
                cancel_requested: job.cancel_requested,
                deadline,
            })
        })
    }

    /// Closes the lease with the worker's outcome. A `Cancelled` outcome the
    /// user did not ask for counts as a failed attempt.
    pub fn complete(
        &self,
        job_id: &JobId,
        claim: &LeaseClaim,
        outcome: Completion,
        now: Timestamp,
    ) -> Result<Job, QueueError> {
        let mut inner = self.inner.lock();
        self.check_claim(&mut inner, job_id, claim, now)?;
        self.mutate(&mut inner, job_id, |job| {
            let event = match outcome {
                Completion::Ok(result) => JobEvent::CompletedOk { result },
                Completion::Err(reason) => JobEvent::CompletedErr { reason },
                Completion::Cancelled if job.cancel_requested => JobEvent::CancelAcknowledged,
                Completion::Cancelled => JobEvent::CompletedErr {
                    reason: "worker stopped before finishing".into(),
                },
            };
            job.apply(event)?;
            Ok(job.clone())
        })
    }

    pub fn cancel(&self, job_id: &JobId) -> Result<Job, QueueError> {
        let mut inner = self.inner.lock();
        self.mutate(&mut inner, job_id, |job| {
            job.apply(JobEvent::Cancel)?;
            Ok(job.clone())
        })
    }

    pub fn restart(&self, job_id: &JobId, now: Timestamp) -> Result<Job, QueueError> {
        let mut inner = self.inner.lock();
        self.mutate(&mut inner, job_id, |job| {
            job.apply(JobEvent::Restart { at: now })?;
            Ok(job.clone())
        })
    }

    /// Applies lease expiry to every running job whose deadline is before `now`.
    pub fn expire_leases(&self, now: Timestamp) -> Vec<(JobId, JobStatus)> {
        let mut inner = self.inner.lock();
        let mut overdue: Vec<(Timestamp, JobId)> = inner
            .jobs
            .values()
            .filter_map(|j| j.lease.as_ref().filter(|l| l.deadline < now).map(|l| (l.deadline, j.job_id.clone())))
            .collect();
        overdue.sort();
        let mut out = Vec::new();
        for (_, id) in overdue {
            match self.mutate(&mut inner, &id, |job| Ok(job.apply(JobEvent::LeaseExpired)?)) {
                Ok(status) => out.push((id, status)),
                Err(e) => tracing::error!(job_id = %id, "lease expiry not applied: {e}"),
            }
        }
        out
    }

    pub fn get(&self, job_id: &JobId) -> Option<Job> {
        self.inner.lock().jobs.get(job_id).cloned()
    }

    /// Forgets a job (its records were purged).
    pub fn remove(&self, job_id: &JobId) -> Option<Job> {
        let mut inner = self.inner.lock();
        let job = inner.jobs.remove(job_id)?;
        inner.unindex(&job);
        Some(job)
    }

    pub fn jobs(&self) -> Vec<Job> {
        self.inner.lock().jobs.values().cloned().collect()
    }

    pub fn stats(&self) -> QueueStats {
        let inner = self.inner.lock();
        let mut stats = QueueStats {
            by_status: JobStatus::ALL.iter().map(|&s| (s, 0)).collect(),
            ..Default::default()
        };
        for job in inner.jobs.values() {
            stats.total += 1;
            *stats.by_status.entry(job.status).or_default() += 1;
            let c = stats.by_class.entry(job.queue_class.clone()).or_default();
            match job.status {
                JobStatus::Queued => c.queued += 1,
                JobStatus::Running => c.running += 1,
                _ => {}
            }
        }
        stats
    }
}
