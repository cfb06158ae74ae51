use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BlobRef, DatasetId, JobId, ModelId, TaskKind, Timestamp, UserId};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const LEASE_EXPIRED_REASON: &str = "lease expired";

pub type JobKind = TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub const ALL: [JobStatus; 5] = [
        JobStatus::Queued,
        JobStatus::Running,
        JobStatus::Succeeded,
        JobStatus::Failed,
        JobStatus::Cancelled,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed | JobStatus::Cancelled)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Queued => "queued",
            JobStatus::Running => "running",
            JobStatus::Succeeded => "succeeded",
            JobStatus::Failed => "failed",
            JobStatus::Cancelled => "cancelled",
        }
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Exclusive, time-bounded claim on a running job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub worker_id: String,
    pub deadline: Timestamp,
    /// Strictly increasing across all grants made by one queue.
    pub fencing_token: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: JobId,
    pub owner: UserId,
    pub kind: JobKind,
    pub plugin_id: String,
    pub task_name: String,
    /// For predict jobs the model being applied; for train jobs the model being produced.
    pub model_id: Option<ModelId>,
    pub dataset_id: Option<DatasetId>,
    pub queue_class: String,
    pub status: JobStatus,
    pub attempt: u32,
    pub max_attempts: u32,
    pub cancel_requested: bool,
    pub submitted_at: Timestamp,
    pub lease: Option<Lease>,
    pub result: Option<BlobRef>,
    pub failure_reason: Option<String>,
    #[serde(default)]
    pub input: Option<BlobRef>,
    /// Artifact the plugin starts from (the applied model, or the parent of a fine-tune).
    #[serde(default)]
    pub model_artifact: Option<BlobRef>,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl Job {
    pub fn new(
        job_id: JobId,
        owner: UserId,
        kind: JobKind,
        plugin_id: impl Into<String>,
        task_name: impl Into<String>,
        queue_class: impl Into<String>,
        submitted_at: Timestamp,
    ) -> Self {
        Self {
            job_id,
            owner,
            kind,
            plugin_id: plugin_id.into(),
            task_name: task_name.into(),
            model_id: None,
            dataset_id: None,
            queue_class: queue_class.into(),
            status: JobStatus::Queued,
            attempt: 1,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            cancel_requested: false,
            submitted_at,
            lease: None,
            result: None,
            failure_reason: None,
            input: None,
            model_artifact: None,
            params: serde_json::Value::Null,
        }
    }

    /// Applies `event`, mutating the job only when the transition is legal.
    pub fn apply(&mut self, event: JobEvent) -> Result<JobStatus, TransitionError> {
        let next = validate_transition(self, &event)?;
        match event {
            JobEvent::LeaseGranted(lease) => self.lease = Some(lease),
            JobEvent::CompletedOk { result } => {
                self.lease = None;
                self.result = result;
                self.failure_reason = None;
            }
            JobEvent::CompletedErr { reason } => self.release_after_failure(next, reason),
            JobEvent::LeaseExpired => self.release_after_failure(next, LEASE_EXPIRED_REASON.to_owned()),
            JobEvent::Cancel => {
                if self.status == JobStatus::Running {
                    self.cancel_requested = true;
                }
            }
            JobEvent::CancelAcknowledged => self.lease = None,
            JobEvent::Restart { at } => {
                self.attempt = 1;
                self.cancel_requested = false;
                self.failure_reason = None;
                self.result = None;
                self.submitted_at = at;
            }
        }
        self.status = next;
        Ok(next)
    }

    fn release_after_failure(&mut self, next: JobStatus, reason: String) {
        self.lease = None;
        if next == JobStatus::Queued {
            self.attempt += 1;
        }
        self.failure_reason = Some(reason);
    }

    /// Structural invariants that must hold in every reachable state.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.lease.is_some() != (self.status == JobStatus::Running) {
            return Err(format!("lease present={} with status {}", self.lease.is_some(), self.status));
        }
        if self.attempt == 0 || self.attempt > self.max_attempts {
            return Err(format!("attempt {} outside 1..={}", self.attempt, self.max_attempts));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobEvent {
    LeaseGranted(Lease),
    CompletedOk { result: Option<BlobRef> },
    CompletedErr { reason: String },
    LeaseExpired,
    Cancel,
    /// The leasing worker stopped cooperatively after seeing `cancel_requested`.
    CancelAcknowledged,
    Restart { at: Timestamp },
}

impl JobEvent {
    pub fn name(&self) -> &'static str {
        match self {
            JobEvent::LeaseGranted(_) => "lease_granted",
            JobEvent::CompletedOk { .. } => "completed_ok",
            JobEvent::CompletedErr { .. } => "completed_err",
            JobEvent::LeaseExpired => "lease_expired",
            JobEvent::Cancel => "cancel",
            JobEvent::CancelAcknowledged => "cancel_acknowledged",
            JobEvent::Restart { .. } => "restart",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid state: cannot apply {event} to a {status} job")]
pub struct TransitionError {
    pub status: JobStatus,
    pub event: &'static str,
}

/// The job lifecycle table. Returns the status the job would move to, or
/// rejects the pair.
pub fn validate_transition(job: &Job, event: &JobEvent) -> Result<JobStatus, TransitionError> {
    use JobStatus::*;
    let after_failure = || {
        if job.cancel_requested {
            Cancelled
        } else if job.attempt < job.max_attempts {
            Queued
        } else {
            Failed
        }
    };
    let next = match (job.status, event) {
        (Queued, JobEvent::LeaseGranted(_)) => Running,
        (Running, JobEvent::CompletedOk { .. }) => Succeeded,
        (Running, JobEvent::CompletedErr { .. } | JobEvent::LeaseExpired) => after_failure(),
        (Queued, JobEvent::Cancel) => Cancelled,
        (Running, JobEvent::Cancel) => Running,
        (Running, JobEvent::CancelAcknowledged) => Cancelled,
        (Failed | Cancelled, JobEvent::Restart { .. }) => Queued,
        (status, event) => {
            return Err(TransitionError {
                status,
                event: event.name(),
            })
        }
    };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn job() -> Job {
        Job::new(JobId::from("j1"), UserId::from("u1"), TaskKind::Predict, "p", "t", "cpu-light", 0)
    }

    fn lease(token: u64) -> Lease {
        Lease {
            worker_id: "w".into(),
            deadline: 1000,
            fencing_token: token,
        }
    }

    #[test]
    fn cancel_queued() {
        let mut j = job();
        assert_eq!(j.apply(JobEvent::Cancel), Ok(JobStatus::Cancelled));
    }

    #[test]
    fn lease_expiry_on_last_attempt_fails() {
        let mut j = job();
        j.attempt = 3;
        j.apply(JobEvent::LeaseGranted(lease(1))).unwrap();
        assert_eq!(j.apply(JobEvent::LeaseExpired), Ok(JobStatus::Failed));
        assert_eq!(j.failure_reason.as_deref(), Some(LEASE_EXPIRED_REASON));
        assert!(j.lease.is_none());
    }

    #[test]
    fn restart_from_succeeded_rejected() {
        let mut j = job();
        j.apply(JobEvent::LeaseGranted(lease(1))).unwrap();
        j.apply(JobEvent::CompletedOk { result: None }).unwrap();
        let err = j.apply(JobEvent::Restart { at: 5 }).unwrap_err();
        assert_eq!(err.status, JobStatus::Succeeded);
        assert_eq!(err.event, "restart");
        assert!(err.to_string().starts_with("invalid state"));
        assert_eq!(j.status, JobStatus::Succeeded);
    }

    #[test]
    fn error_requeues_with_next_attempt() {
        let mut j = job();
        j.apply(JobEvent::LeaseGranted(lease(1))).unwrap();
        let next = j
            .apply(JobEvent::CompletedErr {
                reason: "boom".into(),
            })
            .unwrap();
        assert_eq!(next, JobStatus::Queued);
        assert_eq!(j.attempt, 2);
        assert_eq!(j.failure_reason.as_deref(), Some("boom"));
    }

    #[test]
    fn cancel_running_is_cooperative() {
        let mut j = job();
        j.apply(JobEvent::LeaseGranted(lease(1))).unwrap();
        assert_eq!(j.apply(JobEvent::Cancel), Ok(JobStatus::Running));
        assert!(j.cancel_requested);
        assert!(j.lease.is_some());
        assert_eq!(j.apply(JobEvent::CancelAcknowledged), Ok(JobStatus::Cancelled));
    }

    #[test]
    fn expiry_after_cancel_request_does_not_requeue() {
        let mut j = job();
        j.apply(JobEvent::LeaseGranted(lease(1))).unwrap();
        j.apply(JobEvent::Cancel).unwrap();
        assert_eq!(j.apply(JobEvent::LeaseExpired), Ok(JobStatus::Cancelled));
    }

    #[test]
    fn restart_resets_attempt_and_position() {
        let mut j = job();
        j.attempt = 3;
        j.apply(JobEvent::LeaseGranted(lease(1))).unwrap();
        j.apply(JobEvent::CompletedErr { reason: "x".into() }).unwrap();
        assert_eq!(j.status, JobStatus::Failed);
        j.apply(JobEvent::Restart { at: 77 }).unwrap();
        assert_eq!((j.status, j.attempt, j.submitted_at), (JobStatus::Queued, 1, 77));
        assert!(j.failure_reason.is_none());
    }

    fn arb_event() -> impl Strategy<Value = JobEvent> {
        prop_oneof![
            (0u64..100).prop_map(|t| JobEvent::LeaseGranted(lease(t))),
            Just(JobEvent::CompletedOk { result: None }),
            Just(JobEvent::CompletedErr { reason: "e".into() }),
            Just(JobEvent::LeaseExpired),
            Just(JobEvent::Cancel),
            Just(JobEvent::CancelAcknowledged),
            (0u64..100).prop_map(|at| JobEvent::Restart { at }),
        ]
    }

    proptest! {
        #[test]
        fn random_walks_preserve_invariants(events in proptest::collection::vec(arb_event(), 0..40)) {
            let mut j = job();
            let mut last_attempt = j.attempt;
            for ev in events {
                let is_restart = matches!(ev, JobEvent::Restart { .. });
                let before = j.clone();
                match j.apply(ev) {
                    Ok(_) => {
                        if !is_restart {
                            prop_assert!(j.attempt >= last_attempt);
                        }
                    }
                    Err(_) => prop_assert_eq!(&j, &before),
                }
                prop_assert!(j.check_invariants().is_ok(), "{:?}", j.check_invariants());
                last_attempt = j.attempt;
            }
        }
    }
}
