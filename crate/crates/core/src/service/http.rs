//! HTTP+JSON API.
//!
//! Callers identify themselves with headers: `x-user-id` (account id,
//! required), `x-user-role` (`student` or `educator`, default student) and
//! `x-developer` (`true` marks developer traffic).
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/courses/{id}/conversations` | `{"mode"?}` | `201 {"conversation_id"}` |
//! | POST | `/conversations/{id}/messages` | `{"text", "selected_documents"?, "mode"?}` | turn outcome |
//! | GET | `/conversations/{id}` | | conversation record |
//! | POST | `/conversations/{id}/share` | `{"shared"?: bool}` | `{"shared"}` |
//! | PUT, GET | `/courses/{id}/config` | course config | course config |
//! | POST | `/courses/{id}/documents` | `{"title","kind","text"}` or `{"documents":[...]}` | document summaries |
//! | GET | `/courses/{id}/documents` | | document summaries |
//! | GET | `/courses/{id}/documents/{doc}` | | document with text |
//! | GET | `/courses/{id}/export` | `from`, `to` (RFC 3339), `developers` | NDJSON |
//! | GET | `/courses/{id}/analytics/{report}` | `developers`, `format=json\|csv` | report or table |
//!
//! Errors are `{"error": code, "message": text}` with a matching status.

use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;

use super::assistant::{Caller, CallerRole, CourseAssistant, ExportRange, QuestionRequest, ServiceError};
use crate::analytics::report_table;
use crate::dispatch::ConversationMode;
use crate::ids::{ConversationId, CourseId, DocumentId};
use crate::knowledge::{DocumentKind, NewDocument, StoreError};
use crate::prompt::CourseConfig;

pub const HEADER_USER: &str = "x-user-id";
pub const HEADER_ROLE: &str = "x-user-role";
pub const HEADER_DEVELOPER: &str = "x-developer";

type AppState = Arc<CourseAssistant>;

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), extra: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let (Some(extra), Some(map)) = (self.extra, body.as_object_mut()) {
            if let Some(fields) = extra.as_object() {
                map.extend(fields.clone());
            }
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let message = e.to_string();
        match e {
            ServiceError::NotFound(_) | ServiceError::Store(StoreError::UnknownCourse(_)) => {
                Self::new(StatusCode::NOT_FOUND, "not_found", message)
            }
            ServiceError::Forbidden(_) => Self::new(StatusCode::FORBIDDEN, "forbidden", message),
            ServiceError::Validation(_) | ServiceError::Record(_) | ServiceError::Store(StoreError::EmptyDocument(_)) => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
            }
            ServiceError::InvalidConfig(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", message),
            ServiceError::Store(_) => Self::new(StatusCode::BAD_GATEWAY, "embedding_failed", message),
            ServiceError::Persist(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_failed", message),
            ServiceError::Generation { message_id, .. } => Self {
                extra: Some(json!({ "message_id": message_id })),
                ..Self::new(StatusCode::BAD_GATEWAY, "generation_failed", message)
            },
        }
    }
}

impl<S: Send + Sync> FromRequestParts<S> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, Self::Rejection> {
        caller_from_headers(&parts.headers)
    }
}

fn caller_from_headers(headers: &HeaderMap) -> Result<Caller, ApiError> {
    let text = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).map(str::trim).filter(|v| !v.is_empty());
    let account = text(HEADER_USER)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", format!("missing {HEADER_USER} header")))?;
    let role = match text(HEADER_ROLE).map(str::to_ascii_lowercase).as_deref() {
        None | Some("student") => CallerRole::Student,
        Some("educator") => CallerRole::Educator,
        Some(other) => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", format!("unknown role `{other}`")))
        }
    };
    let developer = text(HEADER_DEVELOPER).is_some_and(|v| matches!(v.to_ascii_lowercase().as_str(), "true" | "1" | "yes"));
    Ok(Caller { account: account.to_owned(), role, developer })
}

pub fn router(assistant: Arc<CourseAssistant>) -> Router {
    Router::new()
        .route("/courses/{id}/conversations", post(start_conversation))
        .route("/conversations/{id}/messages", post(post_message))
        .route("/conversations/{id}", get(get_conversation))
        .route("/conversations/{id}/share", post(share))
        .route("/courses/{id}/config", get(get_config).put(put_config))
        .route("/courses/{id}/documents", get(list_documents).post(upload_documents))
        .route("/courses/{id}/documents/{doc}", get(get_document))
        .route("/courses/{id}/export", get(export))
        .route("/courses/{id}/analytics/{report}", get(analytics))
        .with_state(assistant)
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct StartBody {
    mode: Option<ConversationMode>,
}

async fn start_conversation(
    State(app): State<AppState>,
    caller: Caller,
    Path(course): Path<CourseId>,
    body: Option<Json<StartBody>>,
) -> Result<Response, ApiError> {
    let mode = body.and_then(|b| b.0.mode).unwrap_or(ConversationMode::General);
    let id = app.start_conversation(&caller, &course, mode).await?;
    Ok((StatusCode::CREATED, Json(json!({ "conversation_id": id }))).into_response())
}

async fn post_message(
    State(app): State<AppState>,
    caller: Caller,
    Path(id): Path<ConversationId>,
    Json(body): Json<QuestionRequest>,
) -> Result<Response, ApiError> {
    Ok(Json(app.post_question(&caller, &id, body).await?).into_response())
}

async fn get_conversation(
    State(app): State<AppState>,
    caller: Caller,
    Path(id): Path<ConversationId>,
) -> Result<Response, ApiError> {
    Ok(Json(app.get_conversation(&caller, &id).await?).into_response())
}

#[derive(Deserialize)]
struct ShareBody {
    #[serde(default = "yes")]
    shared: bool,
}

fn yes() -> bool {
    true
}

async fn share(
    State(app): State<AppState>,
    caller: Caller,
    Path(id): Path<ConversationId>,
    body: Option<Json<ShareBody>>,
) -> Result<Response, ApiError> {
    let shared = body.is_none_or(|b| b.0.shared);
    app.set_shared(&caller, &id, shared).await?;
    Ok(Json(json!({ "conversation_id": id, "shared": shared })).into_response())
}

async fn get_config(State(app): State<AppState>, _caller: Caller, Path(course): Path<CourseId>) -> Result<Response, ApiError> {
    let config = app.course_config(&course).ok_or_else(|| ServiceError::NotFound(format!("course {course}")))?;
    Ok(Json(config.as_ref().clone()).into_response())
}

async fn put_config(
    State(app): State<AppState>,
    caller: Caller,
    Path(course): Path<CourseId>,
    Json(config): Json<CourseConfig>,
) -> Result<Response, ApiError> {
    app.put_course_config(&caller, &course, config)?;
    let stored = app.course_config(&course).expect("config just stored");
    Ok(Json(stored.as_ref().clone()).into_response())
}

#[derive(Deserialize)]
struct UploadDocument {
    title: String,
    kind: DocumentKind,
    text: String,
    #[serde(default)]
    source_uri: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum UploadBody {
    Many { documents: Vec<UploadDocument> },
    One(UploadDocument),
}

async fn upload_documents(
    State(app): State<AppState>,
    caller: Caller,
    Path(course): Path<CourseId>,
    Json(body): Json<UploadBody>,
) -> Result<Response, ApiError> {
    let uploads = match body {
        UploadBody::Many { documents } => documents,
        UploadBody::One(doc) => vec![doc],
    };
    let documents = uploads
        .into_iter()
        .map(|u| NewDocument { source_uri: u.source_uri, ..NewDocument::new(u.title, u.kind, u.text) })
        .collect();
    let summaries = app.upload_documents(&caller, &course, documents).await?;
    Ok((StatusCode::CREATED, Json(summaries)).into_response())
}

async fn list_documents(State(app): State<AppState>, _caller: Caller, Path(course): Path<CourseId>) -> Result<Response, ApiError> {
    Ok(Json(app.list_documents(&course)?).into_response())
}

async fn get_document(
    State(app): State<AppState>,
    _caller: Caller,
    Path((course, doc)): Path<(CourseId, DocumentId)>,
) -> Result<Response, ApiError> {
    Ok(Json(app.get_document(&course, &doc)?).into_response())
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct ExportQuery {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    developers: Option<bool>,
    format: Option<String>,
}

async fn export(
    State(app): State<AppState>,
    caller: Caller,
    Path(course): Path<CourseId>,
    Query(query): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let range = ExportRange { from: query.from, to: query.to };
    let body = app.export(&caller, &course, range, query.developers.unwrap_or(false)).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn analytics(
    State(app): State<AppState>,
    caller: Caller,
    Path((course, report)): Path<(CourseId, String)>,
    Query(query): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let usage = app.usage_report(&caller, &course, query.developers.unwrap_or(false)).await?;
    let csv = match query.format.as_deref() {
        None | Some("json") => false,
        Some("csv") => true,
        Some(other) => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", format!("unknown format `{other}`")))
        }
    };
    if report == "usage" {
        if csv {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", "the usage report is JSON only"));
        }
        return Ok(Json(usage).into_response());
    }
    let table = report_table(&report, &usage, None)
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()))?;
    Ok(if csv {
        ([(header::CONTENT_TYPE, "text/csv")], table.to_csv()).into_response()
    } else {
        Json(table.to_json()).into_response()
    })
}
