//! HTTP/JSON routes for live annotation sessions.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hast_core::engine::{CurvePoint, Phase};
use hast_core::ExperimentConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::sessions::{SessionError, SessionStore, SessionView};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use SessionError::*;
        let status = match &e {
            UnknownSession(_) | UnknownDataset(_) => StatusCode::NOT_FOUND,
            InvalidConfig(_) | NotPending(_) | LabelOutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            WrongPhase(_) | AlreadySubmitted(_) => StatusCode::CONFLICT,
            CorruptLog(_) | Storage(_) | Engine(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub dataset: String,
    #[serde(default)]
    pub config: ExperimentConfig,
    #[serde(default)]
    pub idempotency_key: Option<String>,
    /// Optional `[id, label]` pairs applied to the seed batch.
    #[serde(default)]
    pub seed_labels: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchResponse {
    pub session_id: String,
    pub phase: Phase,
    pub batch_index: usize,
    pub ids: Vec<usize>,
    pub texts: Vec<Option<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<PredictionOut>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionOut {
    pub label: usize,
    pub confidence: f64,
}

#[derive(Debug, Deserialize)]
pub struct LabelsRequest {
    pub labels: Vec<(usize, usize)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub session_id: String,
    pub dataset: String,
    pub phase: Phase,
    pub batch_index: usize,
    pub remaining: usize,
    pub curve: Vec<CurvePoint>,
    pub pseudo_counts: Vec<usize>,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(query_batch))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/export", get(export))
        .with_state(store)
}

fn batch_response(view: &SessionView) -> BatchResponse {
    let texts = view
        .pending_ids
        .iter()
        .map(|&id| view.data.train(id).text.clone())
        .collect();
    let predictions = if view.config.reveal_predictions {
        view.model.as_ref().map(|model| {
            view.pending_ids
                .iter()
                .filter_map(|&id| model.predict(view.data.embedding(id)).ok())
                .map(|p| PredictionOut {
                    label: p.label,
                    confidence: p.confidence,
                })
                .collect()
        })
    } else {
        None
    };
    BatchResponse {
        session_id: view.session_id.clone(),
        phase: view.phase,
        batch_index: view.batch_index,
        ids: view.pending_ids.clone(),
        texts,
        predictions,
    }
}

async fn create_session(
    State(store): State<Arc<SessionStore>>,
    headers: HeaderMap,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<BatchResponse>)> {
    let Json(req) = body?;
    let key = req.idempotency_key.or_else(|| {
        headers
            .get(IDEMPOTENCY_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    });
    let seed: Option<HashMap<usize, usize>> = req.seed_labels.map(|v| v.into_iter().collect());
    let (handle, created) = tokio::task::spawn_blocking(move || {
        store.create(&req.dataset, req.config, key, seed.as_ref())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(batch_response(&handle.view()))))
}

async fn query_batch(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<BatchResponse>> {
    let view = store.get(&id)?.view();
    if view.phase != Phase::AwaitingLabels {
        return Err(SessionError::WrongPhase(view.phase).into());
    }
    Ok(Json(batch_response(&view)))
}

async fn submit_labels(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Result<Json<LabelsRequest>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body?;
    let ack = store.submit(&id, &req.labels).await?;
    Ok(Json(json!({ "accepted": ack.accepted, "remaining": ack.remaining })))
}

async fn metrics(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<MetricsResponse>> {
    let view = store.get(&id)?.view();
    let remaining = if view.phase == Phase::AwaitingLabels {
        view.pending_ids.len() - view.submitted
    } else {
        0
    };
    Ok(Json(MetricsResponse {
        session_id: view.session_id,
        dataset: view.dataset,
        phase: view.phase,
        batch_index: view.batch_index,
        remaining,
        pseudo_counts: view.curve.pseudo_counts(),
        auc: view.curve.auc().ok(),
        curve: view.curve.points,
        config: view.config,
    }))
}

/// Full event log, curve and latest model of a session.
async fn export(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let handle = store.get(&id)?;
    let core = handle.core.lock().await;
    Ok(Json(json!({
        "session_id": core.id(),
        "phase": core.phase(),
        "events": core.events(),
        "curve": core.curve(),
        "model": core.current_model(),
    })))
}
