use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use promptcrafter_core::{SessionError, StoreError};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("language model failed: {0}")]
    Provider(String),
    #[error("language model returned too few items: {0}")]
    NotEnoughItems(String),
    #[error("{0}")]
    Validation(String),
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("storage failure: {0}")]
    Store(StoreError),
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => ServiceError::UnknownSession(id.to_string()),
            other => ServiceError::Store(other),
        }
    }
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use SessionError as S;
        match self {
            ServiceError::UnknownSession(_)
            | ServiceError::UnknownJob(_)
            | ServiceError::UnknownImage(_) => StatusCode::NOT_FOUND,
            ServiceError::Provider(_) | ServiceError::NotEnoughItems(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Session(e) => match e {
                S::EmptyPrompt => StatusCode::BAD_REQUEST,
                S::UnknownStep(_) => StatusCode::NOT_FOUND,
                S::StepNotOpen(_)
                | S::NoQuestionSelected
                | S::NoAnswersSelected
                | S::NoGenerationForAnswer(_)
                | S::CannotRevertOpenStep(_) => StatusCode::CONFLICT,
                S::UnknownQuestion(_)
                | S::EmptyQuestion
                | S::TooManyAnswers { .. }
                | S::DuplicateAnswer(_)
                | S::EmptyAnswer
                | S::AnswerNotSelected(_) => StatusCode::UNPROCESSABLE_ENTITY,
                S::BadBatchSize { .. }
                | S::BadOrdinal { .. }
                | S::EmptyBatchItem
                | S::QuestionMismatch { .. }
                | S::ResultAnswerMismatch { .. }
                | S::EmptyResult => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }

    pub fn code(&self) -> &'static str {
        use SessionError as S;
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownJob(_) => "unknown_job",
            ServiceError::UnknownImage(_) => "unknown_image",
            ServiceError::Provider(_) => "provider_error",
            ServiceError::NotEnoughItems(_) => "not_enough_items",
            ServiceError::Validation(_) => "validation_error",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Store(_) => "storage_error",
            ServiceError::Session(e) => match e {
                S::EmptyPrompt => "empty_prompt",
                S::UnknownStep(_) => "unknown_step",
                S::StepNotOpen(_) => "step_not_open",
                S::BadBatchSize { .. } => "bad_batch_size",
                S::BadOrdinal { .. } => "bad_ordinal",
                S::EmptyBatchItem => "empty_batch_item",
                S::EmptyQuestion => "empty_question",
                S::UnknownQuestion(_) => "unknown_question",
                S::NoQuestionSelected => "no_question_selected",
                S::QuestionMismatch { .. } => "question_mismatch",
                S::NoAnswersSelected => "no_answers_selected",
                S::TooManyAnswers { .. } => "too_many_answers",
                S::DuplicateAnswer(_) => "duplicate_answer",
                S::EmptyAnswer => "empty_answer",
                S::AnswerNotSelected(_) => "answer_not_selected",
                S::ResultAnswerMismatch { .. } => "result_answer_mismatch",
                S::EmptyResult => "empty_result",
                S::NoGenerationForAnswer(_) => "no_generation_for_answer",
                S::CannotRevertOpenStep(_) => "cannot_revert_open_step",
            },
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        (status, Json(body)).into_response()
    }
}
