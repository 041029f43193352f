//! HTTP recognition service.
//!
//! `POST /recognize` takes `{"strokes": [[[x, y], ...], ...]}` or
//! `{"image": "<base64 of 48×48 grayscale bytes>"}` plus an optional `"k"`
//! and answers with softmax-ranked candidates. `GET /health` reports the
//! loaded model, or 503 while loading.

use std::future::IntoFuture;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};

use hzr_core::data::StrokeSample;
use hzr_core::infer::{self, Candidate, InferError, DEFAULT_CANDIDATES};
use hzr_core::model::{checkpoint, count_params, CheckpointError, Network};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot load model: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot read names file {path}: {source}")]
    Names { path: PathBuf, source: std::io::Error },
    #[error("names file lists {names} names for {classes} classes")]
    NameCount { names: usize, classes: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What `GET /health` reports about the loaded model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub family: String,
    pub classes: usize,
    pub params: u64,
    pub footprint_bytes: u64,
    pub load_time_s: f64,
    pub named: bool,
}

/// A read-only network plus its optional label names.
pub struct Model {
    net: Network<f32>,
    names: Option<Vec<String>>,
    info: ModelInfo,
}

impl Model {
    pub fn new(net: Network<f32>, names: Option<Vec<String>>, load_time_s: f64) -> Result<Self, ServeError> {
        let classes = net.num_classes();
        if let Some(n) = &names {
            if n.len() < classes {
                return Err(ServeError::NameCount { names: n.len(), classes });
            }
        }
        let count = count_params(net.spec());
        let info = ModelInfo {
            family: net.spec().family().to_string(),
            classes,
            params: count.total,
            footprint_bytes: count.footprint_bytes(),
            load_time_s,
            named: names.is_some(),
        };
        Ok(Self { net, names, info })
    }

    pub fn load(path: impl AsRef<Path>, names: Option<&Path>) -> Result<Self, ServeError> {
        let start = Instant::now();
        let net = checkpoint::load(path)?;
        let names = names
            .map(|p| {
                std::fs::read_to_string(p)
                    .map(|t| infer::parse_names(&t))
                    .map_err(|source| ServeError::Names { path: p.to_path_buf(), source })
            })
            .transpose()?;
        Self::new(net, names, start.elapsed().as_secs_f64())
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }
}

/// Shared handle; empty until a model is installed.
#[derive(Clone, Default)]
pub struct AppState {
    model: Arc<OnceLock<Arc<Model>>>,
}

impl AppState {
    pub fn with_model(model: Model) -> Self {
        let s = Self::default();
        s.install(model);
        s
    }

    /// First install wins; later calls are ignored.
    pub fn install(&self, model: Model) {
        let _ = self.model.set(Arc::new(model));
    }

    pub fn model(&self) -> Option<Arc<Model>> {
        self.model.get().cloned()
    }
}

#[derive(Debug, Deserialize)]
pub struct RecognizeRequest {
    #[serde(default)]
    pub strokes: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecognizeResponse {
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Serialize)]
struct HealthResponse<'a> {
    status: &'static str,
    #[serde(flatten)]
    model: &'a ModelInfo,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn unavailable() -> ApiError {
    ApiError(StatusCode::SERVICE_UNAVAILABLE, "model not loaded".into())
}

impl From<InferError> for ApiError {
    fn from(e: InferError) -> Self {
        match e {
            InferError::Model(_) => ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            _ => bad_request(e.to_string()),
        }
    }
}

fn run(model: &Model, req: RecognizeRequest) -> Result<Vec<Candidate>, ApiError> {
    let net = &model.net;
    let image = match (req.strokes, req.image) {
        (Some(strokes), None) => infer::image_from_strokes(net, &StrokeSample::new(strokes, None))?,
        (None, Some(b64)) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| bad_request(format!("image is not valid base64: {e}")))?;
            infer::image_from_bytes(net, &bytes)?
        }
        (Some(_), Some(_)) => return Err(bad_request("give either strokes or image, not both")),
        (None, None) => return Err(bad_request("missing strokes or image")),
    };
    let k = req.k.unwrap_or(DEFAULT_CANDIDATES);
    Ok(infer::recognize(net, &image, k, model.names.as_deref())?)
}

async fn recognize(State(state): State<AppState>, body: Bytes) -> Result<Json<RecognizeResponse>, ApiError> {
    let model = state.model().ok_or_else(unavailable)?;
    let req: RecognizeRequest =
        serde_json::from_slice(&body).map_err(|e| bad_request(format!("malformed request: {e}")))?;
    let candidates = tokio::task::spawn_blocking(move || run(&model, req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(RecognizeResponse { candidates }))
}

async fn health(State(state): State<AppState>) -> Response {
    match state.model() {
        Some(m) => Json(HealthResponse {
            status: "ok",
            model: m.info(),
        })
        .into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(serde_json::json!({ "status": "loading" }))).into_response(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/recognize", post(recognize))
        .route("/health", get(health))
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub model: PathBuf,
    pub names: Option<PathBuf>,
    pub addr: SocketAddr,
}

/// Listens immediately and answers 503 until the checkpoint has loaded.
pub async fn serve(config: ServeConfig) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    let state = AppState::default();
    let loader = state.clone();
    let load = tokio::task::spawn_blocking(move || {
        let model = Model::load(&config.model, config.names.as_deref())?;
        loader.install(model);
        Ok::<_, ServeError>(())
    });
    let server = tokio::spawn(axum::serve(listener, router(state)).into_future());
    if let Err(e) = load.await.map_err(std::io::Error::other)? {
        server.abort();
        return Err(e);
    }
    server.await.map_err(std::io::Error::other)??;
    Ok(())
}
