use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use annolab_core::queue::QueueError;
use annolab_core::store::StoreError;

use crate::wire::ErrorBody;

/// An HTTP error with a machine-readable code.
///
/// | status | codes |
/// |---|---|
/// | 400 | `bad_request` |
/// | 401 | `unauthorized` |
/// | 403 | `forbidden` |
/// | 404 | `not_found` |
/// | 409 | `invalid_state`, `version_conflict`, `not_ready`, `lease_lost`, `log_gap`, `conflict` |
/// | 413 | `payload_too_large` |
/// | 500 | `internal` |
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{status} {code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        let body = ErrorBody {
            status: self.status.as_u16(),
            code: self.code.to_owned(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { kind, id } => ApiError::not_found(format!("{kind} {id}")),
            StoreError::BlobNotFound(id) => ApiError::not_found(format!("blob {id}")),
            StoreError::VersionConflict { .. } => ApiError::conflict("version_conflict", e.to_string()),
            StoreError::LogGap { .. } => ApiError::conflict("log_gap", e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        match &e {
            QueueError::UnknownJob(id) => ApiError::not_found(format!("job {id}")),
            QueueError::Duplicate(_) => ApiError::conflict("conflict", e.to_string()),
            QueueError::NotEnqueueable(..) => ApiError::bad_request(e.to_string()),
            QueueError::NotLeaseHolder(_) | QueueError::LeaseExpired(_) => ApiError::conflict("lease_lost", e.to_string()),
            QueueError::InvalidState(_) => ApiError::conflict("invalid_state", e.to_string()),
            QueueError::Persist(..) => ApiError::internal(e.to_string()),
        }
    }
}
