use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pilot_core::PoolError;
use serde_json::{json, Value};

#[derive(Debug)]
pub enum ApiError {
    UnknownSession(String),
    BusySession(String),
    KeyNotFound(String),
    MalformedKey(String),
    InvalidValue(String),
    InvalidUpload(Value),
    BadRequest(String),
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str, String) {
        match self {
            ApiError::UnknownSession(id) => (StatusCode::NOT_FOUND, "UnknownSession", format!("no session {id}")),
            ApiError::BusySession(id) => {
                (StatusCode::CONFLICT, "BusySession", format!("session {id} already has a query in flight"))
            }
            ApiError::KeyNotFound(k) => (StatusCode::NOT_FOUND, "KeyNotFound", format!("no memory key {k}")),
            ApiError::MalformedKey(k) => (StatusCode::BAD_REQUEST, "MalformedKey", format!("malformed key {k:?}")),
            ApiError::InvalidValue(m) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidValue", m.clone()),
            ApiError::InvalidUpload(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "InvalidValue", "upload contains invalid SMILES lines".into())
            }
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "BadRequest", m.clone()),
        }
    }
}

impl From<PoolError> for ApiError {
    fn from(e: PoolError) -> Self {
        match e {
            PoolError::MalformedKey(k) => ApiError::MalformedKey(k),
            PoolError::KeyNotFound(k) => ApiError::KeyNotFound(k),
            other => ApiError::InvalidValue(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = self.parts();
        let mut body = json!({"error": kind, "message": message});
        if let ApiError::InvalidUpload(details) = self {
            body["invalid_lines"] = details;
        }
        (status, Json(body)).into_response()
    }
}
