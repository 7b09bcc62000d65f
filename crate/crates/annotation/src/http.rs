//! JSON-over-HTTP front end.
//!
//! | method | path | body / query | reply |
//! |---|---|---|---|
//! | GET | /tasks/collection | `annotator` | `CollectionTask`, or 204 when none is left |
//! | POST | /responses/collection | `CollectionResponse` | `CollectionReceipt` |
//! | GET | /tasks/verification | `annotator` | `VerificationView`, or 204 |
//! | POST | /responses/verification | `VerificationResponse` | 204 |
//! | GET | /templates | `relation`, `status` (optional) | list of `TemplateRecord` |
//! | POST | /templates/{id}/evaluate | | `TemplateRecord` |
//!
//! Errors come back as `{"error": "..."}` with 400, 404, 409 or 500.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use slotshot_core::querify::TemplateStatus;

use crate::service::{AnnotationService, CollectionResponse, ServiceError, VerificationResponse};

type Shared = Arc<AnnotationService>;

pub struct ApiError(StatusCode, String);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = match &e {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::BAD_REQUEST,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if code == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{e}");
        }
        ApiError(code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

impl AnnotatorQuery {
    fn id(self) -> Result<String, ApiError> {
        self.annotator
            .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "missing annotator".into()))
    }
}

#[derive(Debug, Deserialize)]
struct TemplateQuery {
    relation: Option<String>,
    status: Option<TemplateStatus>,
}

fn some_or_no_content<T: serde::Serialize>(v: Option<T>) -> Response {
    match v {
        Some(v) => Json(v).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn collection_task(State(s): State<Shared>, Query(q): Query<AnnotatorQuery>) -> Result<Response, ApiError> {
    Ok(some_or_no_content(s.next_collection_task(&q.id()?)?))
}

async fn collection_response(
    State(s): State<Shared>,
    body: Result<Json<CollectionResponse>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(resp) = body?;
    Ok(Json(s.submit_collection(resp)?).into_response())
}

async fn verification_task(State(s): State<Shared>, Query(q): Query<AnnotatorQuery>) -> Result<Response, ApiError> {
    Ok(some_or_no_content(s.next_verification_task(&q.id()?)?))
}

async fn verification_response(
    State(s): State<Shared>,
    body: Result<Json<VerificationResponse>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(resp) = body?;
    s.submit_verification(resp)?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn list_templates(State(s): State<Shared>, Query(q): Query<TemplateQuery>) -> Response {
    Json(s.templates(q.relation.as_deref(), q.status)).into_response()
}

async fn evaluate(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(s.evaluate(&id)?).into_response())
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/tasks/collection", get(collection_task))
        .route("/responses/collection", post(collection_response))
        .route("/tasks/verification", get(verification_task))
        .route("/responses/verification", post(verification_response))
        .route("/templates", get(list_templates))
        .route("/templates/{id}/evaluate", post(evaluate))
        .with_state(service)
}

async fn shutdown_signal() {
    let interrupt = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = interrupt => {}
        _ = terminate => {}
    }
    log::info!("shutting down");
}

/// Serves until ctrl-c or SIGTERM, then writes a final snapshot.
pub async fn serve(service: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service.clone()))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    service.write_snapshot().map_err(std::io::Error::other)
}
