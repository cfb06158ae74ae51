use std::sync::Arc;

use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;

use annolab_core::domain::{AuthToken, Role, UserAccount};

use crate::error::ApiError;
use crate::state::AppState;

/// The authenticated account behind a bearer token.
pub struct Caller(pub UserAccount);

/// A caller holding a worker-role token.
pub struct WorkerCaller(pub UserAccount);

impl FromRequestParts<Arc<AppState>> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
        let raw = header
            .strip_prefix("Bearer ")
            .ok_or_else(|| ApiError::unauthorized("expected 'Authorization: Bearer <token>'"))?;
        let token = AuthToken::parse(raw.trim()).ok_or_else(|| ApiError::unauthorized("malformed token"))?;
        match state.user_for_token(&token)? {
            Some(user) => Ok(Caller(user)),
            None => Err(ApiError::unauthorized("unknown token")),
        }
    }
}

impl FromRequestParts<Arc<AppState>> for WorkerCaller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let Caller(user) = Caller::from_request_parts(parts, state).await?;
        if user.role != Role::Worker {
            return Err(ApiError::unauthorized("worker endpoints need a worker token"));
        }
        Ok(WorkerCaller(user))
    }
}
