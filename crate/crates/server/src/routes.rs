use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use promptcrafter_core::{AnswerBatch, QuestionBatch, QuestionSource, SessionId, StepId};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::ServiceError;
use crate::jobs::Job;
use crate::service::Service;
use crate::views::{HistoryView, JobAccepted, SessionSummary, StepView};

type AppState = Arc<Service>;
type ApiResult<T> = Result<T, ServiceError>;

/// JSON body extractor whose rejections use the API error format.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(JsonRejection::JsonDataError(e)) => Err(ServiceError::Validation(e.body_text())),
            Err(e) => Err(ServiceError::BadRequest(e.body_text())),
        }
    }
}

#[derive(Deserialize)]
struct CreateSession {
    initial_prompt: String,
}

#[derive(Deserialize)]
struct SelectQuestion {
    text: String,
    #[serde(default = "default_source")]
    source: QuestionSource,
}

fn default_source() -> QuestionSource {
    QuestionSource::Model
}

#[derive(Deserialize)]
struct SelectAnswers {
    answers: Vec<String>,
}

#[derive(Deserialize)]
struct Confirm {
    answer: String,
}

#[derive(Deserialize)]
struct Revert {
    step_id: StepId,
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/history", get(history))
        .route("/api/sessions/{id}/revert", post(revert))
        .route(
            "/api/sessions/{id}/steps/current/questions",
            post(request_questions),
        )
        .route(
            "/api/sessions/{id}/steps/current/question",
            put(select_question),
        )
        .route(
            "/api/sessions/{id}/steps/current/answers/proposals",
            post(request_answers),
        )
        .route("/api/sessions/{id}/steps/current/answers", put(set_answers))
        .route("/api/sessions/{id}/steps/current/generate", post(generate))
        .route("/api/sessions/{id}/steps/current/confirm", post(confirm))
        .route("/api/jobs/{job_id}", get(job))
        .route("/api/images/{image_id}", get(image))
        .with_state(service)
}

async fn create_session(
    State(svc): State<AppState>,
    Body(req): Body<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let session = svc.create_session(&req.initial_prompt)?;
    Ok((StatusCode::CREATED, Json(SessionSummary::from(&session))))
}

async fn get_session(
    State(svc): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionSummary>> {
    let session = svc.get_session(&SessionId(id))?;
    Ok(Json(SessionSummary::from(&session)))
}

async fn history(
    State(svc): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<HistoryView>> {
    let session = svc.get_session(&SessionId(id))?;
    Ok(Json(HistoryView::from(&session)))
}

async fn request_questions(
    State(svc): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<QuestionBatch>> {
    Ok(Json(svc.request_questions(&SessionId(id)).await?))
}

async fn select_question(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<SelectQuestion>,
) -> ApiResult<Json<StepView>> {
    let session = svc
        .select_question(&SessionId(id), &req.text, req.source)
        .await?;
    Ok(Json(StepView::active(&session)))
}

async fn request_answers(
    State(svc): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<AnswerBatch>> {
    Ok(Json(svc.request_answers(&SessionId(id)).await?))
}

async fn set_answers(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<SelectAnswers>,
) -> ApiResult<Json<StepView>> {
    let session = svc.set_answers(&SessionId(id), &req.answers).await?;
    Ok(Json(StepView::active(&session)))
}

async fn generate(
    State(svc): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<JobAccepted>)> {
    let job = svc.start_generation(&SessionId(id)).await?;
    Ok((StatusCode::ACCEPTED, Json(JobAccepted { job_id: job.id })))
}

async fn job(State(svc): State<AppState>, Path(job_id): Path<String>) -> ApiResult<Json<Job>> {
    Ok(Json(svc.job(&job_id)?))
}

async fn confirm(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<Confirm>,
) -> ApiResult<Json<StepView>> {
    let session = svc.confirm(&SessionId(id), &req.answer).await?;
    Ok(Json(StepView::active(&session)))
}

async fn revert(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<Revert>,
) -> ApiResult<Json<StepView>> {
    let session = svc.revert(&SessionId(id), req.step_id).await?;
    Ok(Json(StepView::active(&session)))
}

async fn image(State(svc): State<AppState>, Path(image_id): Path<String>) -> ApiResult<Response> {
    let path = svc.image_path(&image_id)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ServiceError::UnknownImage(image_id))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}
