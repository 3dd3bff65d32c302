use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use surgq_core::corpus::CorpusError;
use surgq_core::quiz::{QuizError, ValidationIssue};

/// JSON body of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    /// Location of the offending value inside the request body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<ValidationIssue>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            body: ErrorBody {
                error: error.into(),
                message: message.into(),
                path: None,
                issues: Vec::new(),
            },
        }
    }

    pub fn bad_request(path: impl Into<String>, message: impl Into<String>) -> ApiError {
        let mut e = ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message);
        e.body.path = Some(path.into()).filter(|p: &String| !p.is_empty());
        e
    }

    pub fn not_found(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.body.error, self.body.message);
        }
        (self.status, Json(self.body)).into_response()
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> ApiError {
        let msg = e.to_string();
        match e {
            CorpusError::UnknownFrame(_) | CorpusError::QuizNotFound(_) => ApiError::not_found(msg),
            CorpusError::InvalidQuiz(errs) => {
                let mut a = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_quiz", msg);
                a.body.issues = errs.0;
                a
            }
            CorpusError::NotFused(_) | CorpusError::NoIndex | CorpusError::NoFeatures => {
                ApiError::new(StatusCode::CONFLICT, "not_ready", msg)
            }
            _ => ApiError::internal(msg),
        }
    }
}

impl From<QuizError> for ApiError {
    fn from(e: QuizError) -> ApiError {
        let path = match e {
            QuizError::UnknownOption(_) => "answer",
            QuizError::PathTooShort(_) => "answer.path",
            _ => "",
        };
        ApiError::bad_request(path, e.to_string())
    }
}

/// Parses a JSON body, reporting the path of the first bad value.
pub fn parse_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let message = e.inner().to_string();
        let mut path = e.path().to_string();
        if path == "." || path == "?" {
            path.clear();
        }
        // Missing fields are reported at the parent; point at the field.
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            path = if path.is_empty() { field.to_string() } else { format!("{path}.{field}") };
        }
        ApiError::bad_request(path, message)
    })
}
