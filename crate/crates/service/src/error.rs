use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use preclin_core::Error as CoreError;
use serde::Serialize;

use crate::store::StoreError;

#[derive(Debug, Clone, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub fields: Vec<FieldError>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), fields: Vec::new() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    pub fn unprocessable(field: &str, message: &str) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: format!("{field}: {message}"),
            fields: vec![FieldError { field: field.into(), message: message.into() }],
        }
    }

    /// Maps an engine error, attributing validation failures to `field`.
    pub fn field(field: &str, e: CoreError) -> Self {
        match e {
            CoreError::ImproperPrior { arm, .. } => Self::unprocessable(&format!("animal.arms[{arm}]"), &e.to_string()),
            CoreError::InvalidCohort(_) => Self::unprocessable("outcomes", &e.to_string()),
            CoreError::ProtocolViolation { .. } => Self::new(StatusCode::CONFLICT, e.to_string()),
            CoreError::Numeric(_) | CoreError::DegenerateData | CoreError::Io(_) => Self::internal(e.to_string()),
            _ => Self::unprocessable(field, &e.to_string()),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        Self::field("request", e)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        tracing::error!("{e}");
        Self::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body {
            error: String,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            fields: Vec<FieldError>,
        }
        (self.status, Json(Body { error: self.message, fields: self.fields })).into_response()
    }
}
