use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Core(#[from] swphm_core::Error),
    #[error("model not trained")]
    NotTrained,
    #[error("no dataset uploaded")]
    NoDataset,
    #[error("{message}")]
    BadRequest { code: &'static str, message: String },
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

impl ApiError {
    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::BadRequest {
            code,
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Core(swphm_core::Error::Io { .. }) | ApiError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            ApiError::Core(e) if e.is_semantic() => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Core(_) | ApiError::BadRequest { .. } => StatusCode::BAD_REQUEST,
            ApiError::NotTrained | ApiError::NoDataset => StatusCode::CONFLICT,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Core(e) => e.code(),
            ApiError::NotTrained => "MODEL_NOT_TRAINED",
            ApiError::NoDataset => "NO_DATASET",
            ApiError::BadRequest { code, .. } => code,
            ApiError::Internal(_) => "INTERNAL",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
