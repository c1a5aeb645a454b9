use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use malleable_core::model::ModelError;
use malleable_core::session_log::LogError;
use malleable_core::synthesis::SynthesisError;
use malleable_core::view::ViewError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no corpus configured")]
    NoCorpus,
    #[error("failed to load corpus {path}: {reason}")]
    CorpusLoad { path: String, reason: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("preset `{preset}` does not fit corpus `{corpus}`: {reason}")]
    PresetMismatch { preset: String, corpus: String, reason: String },
    #[error("http provider needs --http-base-url")]
    MissingProviderUrl,
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown corpus `{0}`")]
    UnknownCorpus(String),
    #[error("expected seq {expected}, session is at {actual}")]
    SeqConflict { expected: u64, actual: u64 },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("internal failure: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use ServiceError::*;
        match self {
            UnknownSession(_) | UnknownCorpus(_) | UnknownPreset(_) => StatusCode::NOT_FOUND,
            SeqConflict { .. } => StatusCode::CONFLICT,
            Invalid(_) | PresetMismatch { .. } | Model(_) => StatusCode::UNPROCESSABLE_ENTITY,
            View(e) => match e {
                ViewError::UnknownView(_)
                | ViewError::UnknownAttribute { .. }
                | ViewError::UnknownCollection(_)
                | ViewError::UnknownItem { .. }
                | ViewError::UnknownLink { .. } => StatusCode::NOT_FOUND,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            },
            Synthesis(e) => match e {
                SynthesisError::UnknownAttribute(_) => StatusCode::NOT_FOUND,
                SynthesisError::Provider(_) => StatusCode::BAD_GATEWAY,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            },
            NoCorpus | CorpusLoad { .. } | MissingProviderUrl | Log(_) | Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        (status, Json(json!({ "error": self.to_string(), "status": status.as_u16() }))).into_response()
    }
}
