//! The HTTP/JSON model service.
//!
//! Requests read an `Arc` snapshot of the model taken at arrival, so a
//! reload never changes a request in flight. Model work runs on the
//! blocking pool.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use csg_core::data::{AgentType, SpeedScaler};
use csg_core::model::CsgConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::catalog::SceneCatalog;
use crate::model::LoadedModel;
use crate::simulate::{simulate, ErrorCode, RequestError, SimulationRequest};
use crate::CliError;

pub struct AppState {
    model: RwLock<Arc<LoadedModel>>,
    checkpoint_path: RwLock<PathBuf>,
    catalog: Option<Arc<SceneCatalog>>,
}

impl AppState {
    pub fn new(model: LoadedModel, checkpoint_path: PathBuf, catalog: Option<SceneCatalog>) -> Arc<Self> {
        Arc::new(Self {
            model: RwLock::new(Arc::new(model)),
            checkpoint_path: RwLock::new(checkpoint_path),
            catalog: catalog.map(Arc::new),
        })
    }

    pub fn model(&self) -> Arc<LoadedModel> {
        self.model.read().expect("model lock").clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model/info", get(model_info))
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}", get(get_scene))
        .route("/simulate", post(post_simulate))
        .route("/admin/reload", post(reload))
        .with_state(state)
}

/// Binds `addr` and serves until Ctrl-C. A busy port is reported before
/// anything is served.
pub fn serve(state: Arc<AppState>, addr: &str) -> Result<(), CliError> {
    let runtime =
        tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::runtime(format!("cannot bind {addr}: {e}")))?;
        let local: SocketAddr = listener.local_addr().map_err(CliError::runtime)?;
        println!("listening on http://{local}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::runtime(format!("server error: {e}")))
    })
}

struct ApiError(StatusCode, RequestError);

impl From<RequestError> for ApiError {
    fn from(e: RequestError) -> Self {
        let status = match e.code {
            ErrorCode::MalformedRequest => StatusCode::BAD_REQUEST,
            ErrorCode::InvalidRequest => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

/// Parses a JSON body. Syntax errors are 400; well-formed JSON that does
/// not fit the schema is 422.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let code = match e.classify() {
            serde_json::error::Category::Data => ErrorCode::InvalidRequest,
            _ => ErrorCode::MalformedRequest,
        };
        RequestError::new(code, e.to_string()).into()
    })
}

fn catalog(state: &AppState) -> Result<&SceneCatalog, ApiError> {
    state
        .catalog
        .as_deref()
        .ok_or_else(|| RequestError::new(ErrorCode::NotFound, "no dataset is mounted").into())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "checkpoint_id": state.model().id() }))
}

#[derive(Serialize)]
struct ModelInfo<'a> {
    checkpoint_id: &'a str,
    dtype: String,
    config: &'a CsgConfig,
    scaler: SpeedScaler,
    vocabulary: &'a [AgentType],
    max_k: usize,
}

async fn model_info(State(state): State<Arc<AppState>>) -> Response {
    let model = state.model();
    Json(ModelInfo {
        checkpoint_id: model.id(),
        dtype: model.dtype().to_string(),
        config: model.config(),
        scaler: model.scaler(),
        vocabulary: model.vocabulary(),
        max_k: crate::simulate::MAX_K,
    })
    .into_response()
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    Ok(Json(catalog(&state)?.summaries()).into_response())
}

async fn get_scene(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let scene = catalog(&state)?
        .get(&id)
        .ok_or_else(|| RequestError::new(ErrorCode::NotFound, format!("unknown scene {id:?}")))?;
    Ok(Json(json!({ "id": id, "scene": scene })).into_response())
}

async fn post_simulate(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let request: SimulationRequest = parse_body(&body)?;
    let model = state.model();
    let catalog = state.catalog.clone();
    let result = tokio::task::spawn_blocking(move || simulate(&model, catalog.as_deref(), &request))
        .await
        .map_err(|e| RequestError::new(ErrorCode::Internal, e.to_string()))??;
    Ok(Json(result).into_response())
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReloadRequest {
    /// Checkpoint to load; the current file when absent.
    path: Option<PathBuf>,
}

async fn reload(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let request: ReloadRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ReloadRequest::default()
    } else {
        parse_body(&body)?
    };
    let path = request
        .path
        .unwrap_or_else(|| state.checkpoint_path.read().expect("path lock").clone());
    let load_path = path.clone();
    let loaded = tokio::task::spawn_blocking(move || LoadedModel::load(&load_path))
        .await
        .map_err(|e| RequestError::new(ErrorCode::Internal, e.to_string()))?
        .map_err(|e| RequestError::invalid("path", e.to_string()))?;

    let mut slot = state.model.write().expect("model lock");
    let (old, new) = (slot.config(), loaded.config());
    if (old.obs_len, old.pred_len) != (new.obs_len, new.pred_len) {
        return Err(RequestError::invalid(
            "path",
            format!(
                "checkpoint windows are {}+{} frames, the service runs {}+{}",
                new.obs_len, new.pred_len, old.obs_len, old.pred_len
            ),
        )
        .into());
    }
    let previous = slot.id().to_string();
    *slot = Arc::new(loaded);
    let current = slot.id().to_string();
    drop(slot);
    *state.checkpoint_path.write().expect("path lock") = path;
    Ok(Json(json!({ "checkpoint_id": current, "previous_checkpoint_id": previous })).into_response())
}
