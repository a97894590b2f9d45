use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pivotfit_core::correction::PivotFieldError;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{message}")]
    Invalid {
        message: String,
        fields: Vec<PivotFieldError>,
    },
    #[error("revision conflict: expected {expected}, session is at {current}")]
    Conflict { expected: u64, current: u64 },
    #[error("{0}")]
    BadRequest(String),
    #[error("refit exceeded the {0} s time budget")]
    Timeout(u64),
    #[error(transparent)]
    Pipeline(#[from] pivotfit_core::Error),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: String,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    fields: &'a [PivotFieldError],
    #[serde(skip_serializing_if = "Option::is_none")]
    current_revision: Option<u64>,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        use pivotfit_core::Error as E;
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict { .. } => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::Pipeline(e) => match e.root() {
                E::Usage(_) => StatusCode::BAD_REQUEST,
                E::NotFound(_) => StatusCode::NOT_FOUND,
                E::Io(_) | E::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let fields = match &self {
            ApiError::Invalid { fields, .. } => fields.as_slice(),
            _ => &[],
        };
        let current_revision = match &self {
            ApiError::Conflict { current, .. } => Some(*current),
            _ => None,
        };
        let body = ErrorBody {
            error: self.to_string(),
            fields,
            current_revision,
        };
        (self.status(), Json(body)).into_response()
    }
}
