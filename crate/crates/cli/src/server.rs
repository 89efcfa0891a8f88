//! HTTP front of the scoring service.
//!
//! `GET /drugs` lists the loaded models, `POST /score/{drug}` scores one
//! patient and `POST /reload` re-reads the model directory.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::Value;

use rwe_core::pipeline::{DrugInfo, FieldError, ScoreError, ScoringService};

pub struct AppState {
    pub service: ScoringService,
    /// Source of `/reload`; reload is refused when unset.
    pub models_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    fields: Vec<FieldError>,
}

fn error(status: StatusCode, kind: &'static str, message: String, fields: Vec<FieldError>) -> Response {
    (status, Json(ErrorBody { error: kind, message, fields })).into_response()
}

async fn drugs(State(state): State<Arc<AppState>>) -> Json<Vec<DrugInfo>> {
    Json(state.service.drugs())
}

async fn score(State(state): State<Arc<AppState>>, Path(drug): Path<String>, body: Bytes) -> Response {
    let payload: Value = if body.iter().all(u8::is_ascii_whitespace) {
        Value::Object(Default::default())
    } else {
        match serde_json::from_slice(&body) {
            Ok(v) => v,
            Err(e) => return error(StatusCode::BAD_REQUEST, "malformed_json", e.to_string(), vec![]),
        }
    };
    match state.service.score_json(&drug, &payload) {
        Ok(r) => Json(r).into_response(),
        Err(e @ ScoreError::NotFound(_)) => error(StatusCode::NOT_FOUND, "not_found", e.to_string(), vec![]),
        Err(ScoreError::Validation(fields)) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, "validation", format!("{} invalid field(s)", fields.len()), fields)
        }
    }
}

async fn reload(State(state): State<Arc<AppState>>) -> Response {
    let Some(dir) = &state.models_dir else {
        return error(
            StatusCode::CONFLICT,
            "no_model_dir",
            "service was started without a model directory".into(),
            vec![],
        );
    };
    match state.service.reload_dir(dir) {
        Ok(()) => Json(state.service.drugs()).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "reload_failed", e.to_string(), vec![]),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/drugs", get(drugs))
        .route("/score/{drug}", post(score))
        .route("/reload", post(reload))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
