//! HTTP scoring service: `GET /v1/health` and multipart `POST /v1/score`.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use axum::extract::multipart::MultipartError;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::scoring::{parse_context, score_request, Models, ScoreError, ScoreResponse, MAX_AUDIO_PARTS};

const BODY_LIMIT: usize = 32 * 1024 * 1024;

/// Shared state; models are set once and never mutated afterwards.
pub struct AppState {
    models: OnceLock<Arc<Models>>,
    load_error: OnceLock<String>,
    workers: Semaphore,
    audit: Option<Mutex<std::fs::File>>,
}

impl AppState {
    pub fn new(workers: usize, audit_log: Option<PathBuf>) -> std::io::Result<Arc<Self>> {
        let audit = audit_log
            .map(|p| std::fs::OpenOptions::new().create(true).append(true).open(p).map(Mutex::new))
            .transpose()?;
        Ok(Arc::new(Self {
            models: OnceLock::new(),
            load_error: OnceLock::new(),
            workers: Semaphore::new(workers.max(1)),
            audit,
        }))
    }

    pub fn with_models(models: Models, workers: usize) -> Arc<Self> {
        let state = Self::new(workers, None).expect("no audit file to open");
        state.set_models(models);
        state
    }

    pub fn set_models(&self, models: Models) {
        let _ = self.models.set(Arc::new(models));
    }

    pub fn set_load_error(&self, message: String) {
        let _ = self.load_error.set(message);
    }

    fn audit(&self, entry: serde_json::Value) {
        if let Some(file) = &self.audit {
            let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
            if let Err(e) = writeln!(f, "{entry}") {
                tracing::warn!("audit log write failed: {e}");
            }
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/score", post(score))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match (state.models.get(), state.load_error.get()) {
        (Some(m), _) => Json(json!({ "status": "ok", "model_versions": m.versions() })).into_response(),
        (None, Some(e)) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "failed", "error": e })),
        )
            .into_response(),
        (None, None) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "loading", "model_versions": null })),
        )
            .into_response(),
    }
}

struct ScoreInput {
    audio: Vec<Vec<u8>>,
    context: Option<String>,
    request_id: Option<String>,
}

fn bad_multipart(e: MultipartError) -> Response {
    error(StatusCode::BAD_REQUEST, format!("malformed multipart body: {e}"))
}

async fn read_parts(mut form: Multipart) -> Result<ScoreInput, Response> {
    let mut input = ScoreInput {
        audio: Vec::new(),
        context: None,
        request_id: None,
    };
    while let Some(field) = form.next_field().await.map_err(bad_multipart)? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "audio" => {
                if input.audio.len() == MAX_AUDIO_PARTS {
                    return Err(error(
                        StatusCode::BAD_REQUEST,
                        format!("at most {MAX_AUDIO_PARTS} audio parts allowed"),
                    ));
                }
                input.audio.push(field.bytes().await.map_err(bad_multipart)?.to_vec());
            }
            "context" if input.context.is_none() => input.context = Some(field.text().await.map_err(bad_multipart)?),
            "request_id" if input.request_id.is_none() => {
                input.request_id = Some(field.text().await.map_err(bad_multipart)?)
            }
            other => return Err(error(StatusCode::BAD_REQUEST, format!("unexpected or repeated part `{other}`"))),
        }
    }
    Ok(input)
}

async fn score(State(state): State<Arc<AppState>>, form: Multipart) -> Response {
    let Some(models) = state.models.get().cloned() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "models are loading");
    };
    let input = match read_parts(form).await {
        Ok(i) => i,
        Err(r) => return r,
    };
    let n_audio = input.audio.len();
    let has_context = input.context.is_some();
    let request_id = input.request_id.clone();
    let Ok(_permit) = state.workers.acquire().await else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "service shutting down");
    };
    let result = tokio::task::spawn_blocking(move || {
        let ctx = input.context.as_deref().map(parse_context).transpose()?;
        score_request(&models, &input.audio, ctx.as_ref(), input.request_id)
    })
    .await;
    let (status, body): (StatusCode, Result<ScoreResponse, String>) = match result {
        Ok(Ok(resp)) => (StatusCode::OK, Ok(resp)),
        Ok(Err(e @ ScoreError::BadRequest(_))) => (StatusCode::BAD_REQUEST, Err(e.to_string())),
        Ok(Err(e @ ScoreError::Undecodable { .. })) => (StatusCode::UNPROCESSABLE_ENTITY, Err(e.to_string())),
        Ok(Err(e @ ScoreError::Inference(_))) => (StatusCode::UNPROCESSABLE_ENTITY, Err(e.to_string())),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Err(format!("scoring task failed: {e}"))),
    };
    state.audit(json!({
        "time": chrono::Utc::now().to_rfc3339(),
        "request_id": request_id,
        "audio_parts": n_audio,
        "has_context": has_context,
        "status": status.as_u16(),
        "p_ensemble": body.as_ref().ok().and_then(|r| r.p_ensemble),
    }));
    match body {
        Ok(resp) => Json(resp).into_response(),
        Err(msg) => error(status, msg),
    }
}

/// Binds, then loads models in the background; requests arriving before the
/// load finishes get 503.
pub async fn serve(
    bind: SocketAddr,
    cough: Option<PathBuf>,
    context: Option<PathBuf>,
    workers: usize,
    audit_log: Option<PathBuf>,
) -> anyhow::Result<()> {
    let state = AppState::new(workers, audit_log)?;
    let listener = TcpListener::bind(bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || match Models::load(cough.as_deref(), context.as_deref()) {
        Ok(m) => {
            tracing::info!(versions = ?m.versions(), "models loaded");
            loader.set_models(m);
        }
        Err(e) => {
            tracing::error!("model load failed: {e:#}");
            loader.set_load_error(format!("{e:#}"));
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
