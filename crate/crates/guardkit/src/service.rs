//! HTTP reward service: exposes group scoring over a small JSON API so a
//! training loop in another process (or language) can fetch rewards and
//! group-normalized advantages without linking this crate.
//!
//! Endpoints:
//! - `POST /v1/rewards` — score one completion group.
//! - `GET /healthz` — liveness probe.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::manifest::SafetyLabel;
use crate::reward::{score_batch, CompletionGroup, RewardSpec};

#[derive(Debug, Clone, Deserialize)]
pub struct RewardRequest {
    pub group_id: String,
    pub policy_id: String,
    pub ground_truth: SafetyLabel,
    pub completions: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RewardResponse {
    pub group_id: String,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

async fn post_rewards(
    State(spec): State<Arc<RewardSpec>>,
    payload: std::result::Result<Json<RewardRequest>, JsonRejection>,
) -> Response {
    // Malformed or type-mismatched bodies are client errors with the field
    // diagnostics serde produced.
    let Json(request) = match payload {
        Ok(json) => json,
        Err(rejection) => {
            return error_response(StatusCode::BAD_REQUEST, rejection.body_text());
        }
    };
    if request.completions.is_empty() {
        return error_response(
            StatusCode::UNPROCESSABLE_ENTITY,
            "completions must be non-empty",
        );
    }
    let group = CompletionGroup {
        group_id: request.group_id,
        policy_id: request.policy_id,
        ground_truth: request.ground_truth,
        completions: request.completions,
    };
    match score_batch(&group, &spec) {
        Ok(batch) => Json(RewardResponse {
            group_id: batch.group_id,
            rewards: batch.rewards,
            advantages: batch.advantages,
        })
        .into_response(),
        Err(e) => error_response(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn healthz() -> &'static str {
    "ok"
}

/// Build the service router around a reward spec.
pub fn reward_router(spec: RewardSpec) -> Router {
    Router::new()
        .route("/v1/rewards", post(post_rewards))
        .route("/healthz", get(healthz))
        .with_state(Arc::new(spec))
}

/// Bind and serve until the process is stopped.
pub async fn serve(bind: SocketAddr, spec: RewardSpec) -> Result<()> {
    spec.validate()?;
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let bound = listener.local_addr()?;
    eprintln!("reward service listening on {bound}");
    axum::serve(listener, reward_router(spec))
        .await
        .map_err(crate::error::Error::Io)?;
    Ok(())
}

/// Bind to an ephemeral port and serve in the background; returns the bound
/// address. Used by tests and examples.
pub async fn spawn_ephemeral(spec: RewardSpec) -> Result<SocketAddr> {
    spec.validate()?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move {
        let _ = axum::serve(listener, reward_router(spec)).await;
    });
    Ok(addr)
}
