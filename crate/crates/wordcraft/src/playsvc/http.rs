//! JSON over HTTP for [`PlayService`].
//!
//! | method | path                     | body            | reply        |
//! |--------|--------------------------|-----------------|--------------|
//! | POST   | /sessions                | CreateRequest   | StateView    |
//! | GET    | /sessions/{id}/state     |                 | StateView    |
//! | POST   | /sessions/{id}/actions   | ActionRequest   | StepView     |
//! | GET    | /sessions/{id}/report    |                 | SessionReport|
//! | GET    | /schema                  |                 | JSON Schema  |
//!
//! Errors reply with `{"error": code, "message": text}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use super::{ActionRequest, CreateRequest, PlayService, SessionError};

/// JSON Schema describing every request and reply body.
pub const SCHEMA: &str = include_str!("../../schema/playsvc.schema.json");

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

pub struct ApiError(StatusCode, &'static str, String);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            SessionError::Finished => (StatusCode::CONFLICT, "finished"),
            SessionError::InvalidSlot { .. } => (StatusCode::BAD_REQUEST, "invalid_slot"),
            SessionError::StaleStep { .. } => (StatusCode::CONFLICT, "stale_step"),
            SessionError::Protocol(_) => (StatusCode::BAD_REQUEST, "invalid_protocol"),
            SessionError::Sampling { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "sampling_failed"),
            SessionError::Env(_) | SessionError::Log(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(e.status(), "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.1,
            message: self.2,
        };
        (self.0, Json(body)).into_response()
    }
}

type Shared = Arc<PlayService>;

async fn create(
    State(svc): State<Shared>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let view = svc.create(req)?;
    log_line("create", &view.session_id, None);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn state(State(svc): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.state(&id)?))
}

async fn act(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<ActionRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let step = svc.act(&id, &req)?;
    log_line("action", &id, Some(step.done));
    Ok(Json(step))
}

async fn report(State(svc): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.report(&id)?))
}

async fn schema() -> impl IntoResponse {
    ([(axum::http::header::CONTENT_TYPE, "application/schema+json")], SCHEMA)
}

/// One JSON line per mutating request on stderr.
fn log_line(event: &str, session: &str, done: Option<bool>) {
    let line = serde_json::json!({ "event": event, "session": session, "episode_done": done });
    eprintln!("{line}");
}

/// CORS for `origin`, or any origin when `None`.
pub fn cors(origin: Option<&str>) -> Result<CorsLayer, axum::http::header::InvalidHeaderValue> {
    let allow = match origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o)?),
        None => AllowOrigin::from(Any),
    };
    Ok(CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([axum::http::header::CONTENT_TYPE]))
}

pub fn router(svc: Shared, cors: CorsLayer) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/actions", post(act))
        .route("/sessions/{id}/report", get(report))
        .route("/schema", get(schema))
        .layer(cors)
        .with_state(svc)
}
