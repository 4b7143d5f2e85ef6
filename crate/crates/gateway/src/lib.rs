//! HTTP front end for [`contextguard::pipeline::Guard`].
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/v1/guard/complete` | `GuardRequest` → `GuardResponse` |
//! | GET | `/v1/sessions/{id}/memory` | memory entries, redacted form |
//! | GET | `/v1/metrics` | ledger aggregates |
//!
//! Errors are JSON: `{"error": {"status": 403, "stage": "route", "message": "..."}}`.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use contextguard::memory::MemoryEntry;
use contextguard::pipeline::{DecisionSummary, Guard, GuardError, GuardRequest};
use serde::Serialize;

pub fn app(guard: Arc<Guard>) -> Router {
    Router::new()
        .route("/v1/guard/complete", post(complete))
        .route("/v1/sessions/:id/memory", get(memory))
        .route("/v1/metrics", get(metrics))
        .with_state(guard)
}

#[derive(Serialize)]
struct ErrorBody {
    status: u16,
    stage: String,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    decision: Option<DecisionSummary>,
}

struct ApiError(StatusCode, ErrorBody);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<GuardError> for ApiError {
    fn from(e: GuardError) -> Self {
        let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let stage = e.stage().to_string();
        let message = e.to_string();
        let decision = match e {
            GuardError::Blocked { decision, .. } => Some(*decision),
            GuardError::Stage { .. } => None,
        };
        ApiError(
            status,
            ErrorBody {
                status: status.as_u16(),
                stage,
                message,
                decision,
            },
        )
    }
}

fn internal(message: String) -> ApiError {
    ApiError(
        StatusCode::INTERNAL_SERVER_ERROR,
        ErrorBody {
            status: 500,
            stage: "internal".into(),
            message,
            decision: None,
        },
    )
}

async fn complete(
    State(guard): State<Arc<Guard>>,
    Json(req): Json<GuardRequest>,
) -> Result<Response, ApiError> {
    let session = req.session_id.clone();
    let out = tokio::task::spawn_blocking(move || guard.handle(&req))
        .await
        .map_err(|e| internal(e.to_string()))?;
    match out {
        Ok(resp) => {
            tracing::info!(session, tier = ?resp.decision.assigned, "request served");
            Ok(Json(resp).into_response())
        }
        Err(e) => {
            tracing::warn!(session, stage = %e.stage(), status = e.status(), "request failed");
            Err(e.into())
        }
    }
}

#[derive(Serialize)]
struct MemoryBody {
    session_id: String,
    entries: Vec<MemoryEntry>,
}

async fn memory(
    State(guard): State<Arc<Guard>>,
    Path(id): Path<String>,
) -> Result<Json<MemoryBody>, ApiError> {
    match guard.session_memory(&id) {
        Some(entries) => Ok(Json(MemoryBody {
            session_id: id,
            entries,
        })),
        None => Err(ApiError(
            StatusCode::NOT_FOUND,
            ErrorBody {
                status: 404,
                stage: "request".into(),
                message: format!("unknown session {id:?}"),
                decision: None,
            },
        )),
    }
}

async fn metrics(State(guard): State<Arc<Guard>>) -> Response {
    Json(guard.metrics()).into_response()
}
