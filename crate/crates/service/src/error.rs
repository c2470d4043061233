use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;
use valtree_core::{Error as CoreError, ProviderError};

/// Failures that prevent the service from starting.
#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("unreadable storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Request failures, rendered as `{error, message, ...}` JSON bodies.
#[derive(Debug, Error)]
pub enum ApiError {
    #[error("no decision with id {0:?}")]
    UnknownDocument(String),
    #[error("base_version {base_version} is stale; the document is at version {current_version}")]
    VersionConflict {
        current_version: u64,
        base_version: u64,
    },
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("storage failure: {0}")]
    Storage(std::io::Error),
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::UnknownDocument(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::VersionConflict { .. } => (StatusCode::CONFLICT, "version_conflict"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            ApiError::Core(e) => match e {
                CoreError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
                CoreError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
                CoreError::NotSynced(_) => (StatusCode::UNPROCESSABLE_ENTITY, "not_synced"),
                CoreError::OutOfBounds { .. } => {
                    (StatusCode::UNPROCESSABLE_ENTITY, "out_of_bounds")
                }
                CoreError::Unscorable => (StatusCode::UNPROCESSABLE_ENTITY, "unscorable"),
                CoreError::Parse { .. }
                | CoreError::UnsupportedSchema { .. }
                | CoreError::InvalidDocument(_) => {
                    (StatusCode::UNPROCESSABLE_ENTITY, "invalid_document")
                }
                CoreError::Provider(ProviderError::Timeout(_)) => {
                    (StatusCode::GATEWAY_TIMEOUT, "provider_timeout")
                }
                CoreError::Provider(_) => (StatusCode::BAD_GATEWAY, "provider_error"),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            tracing::warn!(error = %self, "request failed");
        }
        let mut body = json!({ "error": code, "message": self.to_string() });
        if let ApiError::VersionConflict {
            current_version,
            base_version,
        } = self
        {
            body["current_version"] = current_version.into();
            body["base_version"] = base_version.into();
        }
        (status, Json(body)).into_response()
    }
}
