//! JSON API backing the interactive UI.
//!
//! Reads share an immutable [`Snapshot`] behind an `Arc`; an in-place prune
//! builds a new snapshot and swaps it in while holding the mutation lock, so
//! a request sees either the old or the new weights, never a mix.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use stylegan_lens::discriminator::mean_probability;
use stylegan_lens::latent::{compare_pair, sample_latents, Perturbation, Space, DELTA_BOUND};
use stylegan_lens::pruning::{count_nonzero, prune_generator, total_weights};
use stylegan_lens::{Discriminator, Error, Generator, ModelSet, Tensor};

use crate::args::ServeArgs;
use crate::commands::{load_models, png_list};
use crate::{CliError, CliResult};

pub const MAX_COUNT: usize = 64;
const DEFAULT_COUNT: usize = 32;

pub struct Snapshot {
    pub g: Generator,
    pub d: Discriminator,
}

pub struct AppState {
    snapshot: RwLock<Arc<Snapshot>>,
    mutation: Mutex<()>,
    allow_in_place: bool,
}

impl AppState {
    /// Serves images from the stabilized generator copy.
    pub fn new(models: ModelSet, allow_in_place: bool) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(Snapshot {
                g: models.g_ema,
                d: models.d,
            })),
            mutation: Mutex::new(()),
            allow_in_place,
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Held for the duration of every mutation.
    pub fn mutation_lock(&self) -> &Mutex<()> {
        &self.mutation
    }

    fn replace(&self, s: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(s);
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Forbidden(String),
    Conflict(String),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => ApiError::BadRequest(m),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        ApiError::Internal(e.message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadRequest(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({ "error": m })),
            ApiError::Forbidden(m) => (StatusCode::FORBIDDEN, json!({ "error": m })),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({ "error": m })),
            ApiError::Internal(detail) => {
                let id = uuid::Uuid::new_v4();
                tracing::error!(%id, %detail, "request failed");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": "internal error", "id": id.to_string() }))
            }
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct InfoResponse {
    pub latent_size: usize,
    pub blocks: usize,
    pub max_res: usize,
    pub num_style_layers: usize,
    pub nonzero_weights: usize,
    pub total_weights: usize,
    pub delta_bound: f32,
    pub max_count: usize,
}

fn default_count() -> usize {
    DEFAULT_COUNT
}

fn default_scale() -> f32 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
    pub truncation_psi: Option<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub seed: u64,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Delta {
    pub dim: usize,
    pub delta: f32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbRequest {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_scale")]
    pub scale: f32,
    #[serde(default)]
    pub deltas: Vec<Delta>,
    #[serde(default)]
    pub w_space: bool,
    pub truncation_psi: Option<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PerturbResponse {
    pub before: Vec<String>,
    pub after: Vec<String>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneRequest {
    pub threshold: f64,
    #[serde(default)]
    pub in_place: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PruneResponse {
    pub threshold: f64,
    pub in_place: bool,
    pub nonzero_weights: usize,
    pub total_weights: usize,
    pub mean_d_score: f64,
    pub images: Vec<String>,
}

fn check_count(count: usize) -> Result<(), ApiError> {
    if count == 0 || count > MAX_COUNT {
        return Err(ApiError::BadRequest(format!("count must be in 1..={MAX_COUNT}, got {count}")));
    }
    Ok(())
}

fn resolve_psi(g: &Generator, psi: Option<f32>) -> Result<f32, ApiError> {
    let psi = psi.unwrap_or(g.config().truncation_psi);
    if !(0.0..=1.0).contains(&psi) {
        return Err(ApiError::BadRequest(format!("truncation_psi must be in [0, 1], got {psi}")));
    }
    Ok(psi)
}

fn encode_all(images: &Tensor) -> Result<Vec<String>, ApiError> {
    Ok(png_list(images)?.iter().map(|b| STANDARD.encode(b)).collect())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker panicked: {e}")))?
}

async fn info(State(state): State<Arc<AppState>>) -> Json<InfoResponse> {
    let s = state.snapshot();
    let cfg = s.g.config();
    Json(InfoResponse {
        latent_size: cfg.latent_size,
        blocks: cfg.blocks,
        max_res: cfg.max_res,
        num_style_layers: s.g.num_style_layers(),
        nonzero_weights: count_nonzero(s.g.params()),
        total_weights: total_weights(s.g.params()),
        delta_bound: DELTA_BOUND,
        max_count: MAX_COUNT,
    })
}

async fn generate(
    State(state): State<Arc<AppState>>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> ApiResult<GenerateResponse> {
    let Json(req) = body?;
    check_count(req.count)?;
    let s = state.snapshot();
    let psi = resolve_psi(&s.g, req.truncation_psi)?;
    blocking(move || {
        let z = sample_latents(req.count, s.g.config().latent_size, req.seed)?;
        let images = s.g.generate(&z.values(), req.seed, psi)?;
        Ok(Json(GenerateResponse {
            seed: req.seed,
            images: encode_all(&images)?,
        }))
    })
    .await
}

async fn perturb(
    State(state): State<Arc<AppState>>,
    body: Result<Json<PerturbRequest>, JsonRejection>,
) -> ApiResult<PerturbResponse> {
    let Json(req) = body?;
    check_count(req.count)?;
    let s = state.snapshot();
    let psi = resolve_psi(&s.g, req.truncation_psi)?;
    let p = Perturbation::new(req.deltas.iter().map(|d| (d.dim, d.delta)).collect(), req.scale);
    p.validate(s.g.config().latent_size, Some(DELTA_BOUND))?;
    let space = if req.w_space { Space::W } else { Space::Z };
    blocking(move || {
        let base = sample_latents(req.count, s.g.config().latent_size, req.seed)?;
        let pair = compare_pair(&s.g, &base, &p, req.seed, psi, space, Some(DELTA_BOUND))?;
        Ok(Json(PerturbResponse {
            before: encode_all(&pair.before)?,
            after: encode_all(&pair.after)?,
            distances: pair.distances,
        }))
    })
    .await
}

fn pruned_snapshot(s: &Snapshot, threshold: f64) -> Result<Snapshot, ApiError> {
    let mut g = s.g.clone();
    prune_generator(&mut g, threshold)?;
    Ok(Snapshot { g, d: s.d.clone() })
}

fn prune_response(s: &Snapshot, req: &PruneRequest) -> Result<PruneResponse, ApiError> {
    let z = sample_latents(req.count, s.g.config().latent_size, req.seed)?;
    let images = s.g.generate(&z.values(), req.seed, s.g.config().truncation_psi)?;
    let score = mean_probability(&s.d.get_score(&images)?);
    Ok(PruneResponse {
        threshold: req.threshold,
        in_place: req.in_place,
        nonzero_weights: count_nonzero(s.g.params()),
        total_weights: total_weights(s.g.params()),
        mean_d_score: score,
        images: encode_all(&images)?,
    })
}

async fn prune(
    State(state): State<Arc<AppState>>,
    body: Result<Json<PruneRequest>, JsonRejection>,
) -> ApiResult<PruneResponse> {
    let Json(req) = body?;
    check_count(req.count)?;
    if !(req.threshold >= 0.0 && req.threshold.is_finite()) {
        return Err(ApiError::BadRequest(format!("threshold must be finite and ≥ 0, got {}", req.threshold)));
    }
    if !req.in_place {
        let s = state.snapshot();
        return blocking(move || {
            let copy = pruned_snapshot(&s, req.threshold)?;
            prune_response(&copy, &req).map(Json)
        })
        .await;
    }
    if !state.allow_in_place {
        return Err(ApiError::Forbidden("in-place pruning is disabled; start serve with --allow-in-place".into()));
    }
    let _guard = state
        .mutation_lock()
        .try_lock()
        .map_err(|_| ApiError::Conflict("another mutation is in progress".into()))?;
    let st = state.clone();
    blocking(move || {
        let next = pruned_snapshot(&st.snapshot(), req.threshold)?;
        let resp = prune_response(&next, &req)?;
        st.replace(next);
        Ok(Json(resp))
    })
    .await
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/info", get(info))
        .route("/api/generate", post(generate))
        .route("/api/perturb", post(perturb))
        .route("/api/prune", post(prune))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub fn run_server(a: &ServeArgs) -> CliResult<()> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .try_init();
    let models = load_models(&a.common, 8)?;
    let state = Arc::new(AppState::new(models, a.allow_in_place));
    let app = router(state, a.static_dir.clone());
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::io(&addr, e))?;
        tracing::info!("listening on http://{addr}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::io(&addr, e))
    })
}
