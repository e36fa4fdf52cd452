use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use log::{error, info};
use lru::LruCache;
use serde::{Deserialize, Serialize};
use tokio::sync::{OwnedSemaphorePermit, Semaphore};
use windrom::uq::{OutOfBounds, Uniform, UncertaintySpec};
use windrom::{Error, ParameterBounds, ParameterPoint};

use crate::engine::{Engine, ModelKind};
use crate::payload::Field;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    /// Cached `/evaluate` responses; 0 disables the cache.
    pub cache_size: usize,
    /// Quantization step of `w_i` [m/s]; 0 evaluates at the exact value.
    pub quant_speed: f64,
    /// Quantization step of `w_d` [deg].
    pub quant_direction: f64,
    /// Concurrent solves before requests are refused with 503.
    pub workers: usize,
    pub max_uq_samples: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { port: 8080, cache_size: 256, quant_speed: 0.05, quant_direction: 0.5, workers: 2, max_uq_samples: 1000 }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> windrom::Result<()> {
        let step = |q: f64| q.is_finite() && q >= 0.0;
        if !step(self.quant_speed) || !step(self.quant_direction) {
            return Err(Error::invalid("quantization steps must be finite and non-negative"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if self.max_uq_samples == 0 {
            return Err(Error::invalid("max_uq_samples must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct CacheKey {
    field: Field,
    model: ModelKind,
    w_i: u64,
    w_d: Option<u64>,
    times: Vec<u64>,
}

pub struct AppState {
    engine: Arc<Engine>,
    config: ServiceConfig,
    cache: Option<Mutex<LruCache<CacheKey, Bytes>>>,
    pool: Arc<Semaphore>,
    started: Instant,
    requests: AtomicU64,
}

impl AppState {
    pub fn new(engine: Engine, config: ServiceConfig) -> windrom::Result<Arc<Self>> {
        config.validate()?;
        Ok(Arc::new(Self {
            engine: Arc::new(engine),
            cache: NonZeroUsize::new(config.cache_size).map(|n| Mutex::new(LruCache::new(n))),
            pool: Arc::new(Semaphore::new(config.workers)),
            config,
            started: Instant::now(),
            requests: AtomicU64::new(0),
        }))
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn cache_len(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.lock().unwrap().len())
    }

    /// Occupies one worker slot until the permit is dropped.
    pub fn reserve_worker(&self) -> Option<OwnedSemaphorePermit> {
        self.pool.clone().try_acquire_owned().ok()
    }

    fn next_id(&self) -> String {
        format!("req-{:06}", self.requests.fetch_add(1, Ordering::Relaxed) + 1)
    }

    /// The parameter at which a request is evaluated.
    pub fn quantize(&self, w_i: f64, w_d: Option<f64>) -> ParameterPoint {
        let snap = |v: f64, q: f64| if q > 0.0 { (v / q).round() * q } else { v };
        ParameterPoint { w_i: snap(w_i, self.config.quant_speed), w_d: w_d.map(|d| snap(d, self.config.quant_direction).rem_euclid(360.0)) }
    }
}

/// Error body `{"error": code, "message": text, "request_id": id}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    id: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>, id: &str) -> Self {
        Self { status, code, message: message.into(), id: id.to_string() }
    }

    fn from_core(e: Error, id: &str) -> Self {
        match e {
            Error::Invalid(_) | Error::Dimension { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.to_string(), id),
            other => {
                error!("{id}: {other}");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "evaluation failed; see the service log", id)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "message": self.message, "request_id": self.id });
        (self.status, [(header::CONTENT_TYPE, "application/json")], body.to_string()).into_response()
    }
}

fn json_response(body: Bytes, cache: Option<&'static str>) -> Response {
    let mut r = ([(header::CONTENT_TYPE, "application/json")], body).into_response();
    if let Some(c) = cache {
        r.headers_mut().insert("x-cache", HeaderValue::from_static(c));
    }
    r
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8], id: &str) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.to_string(), id))
}

fn to_bytes<T: Serialize>(v: &T, id: &str) -> Result<Bytes, ApiError> {
    serde_json::to_vec(v).map(Bytes::from).map_err(|e| ApiError::from_core(Error::Container(e.to_string()), id))
}

/// Runs `job` on the blocking pool, or refuses when every worker is busy.
async fn run_bounded<T: Send + 'static>(
    state: &AppState,
    id: &str,
    job: impl FnOnce() -> windrom::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    let permit = state
        .pool
        .clone()
        .try_acquire_owned()
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "busy", "all workers are busy; retry later", id))?;
    let out = tokio::task::spawn_blocking(move || {
        let r = job();
        drop(permit);
        r
    })
    .await
    .map_err(|e| {
        error!("{id}: worker panicked: {e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "evaluation failed; see the service log", id)
    })?;
    out.map_err(|e| ApiError::from_core(e, id))
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'static str,
    version: &'static str,
    mesh_hash: &'a str,
    podi_hash: &'a str,
    podg_hash: Option<&'a str>,
    bounds: &'a ParameterBounds,
    uptime_seconds: f64,
    cache_size: usize,
    cache_capacity: usize,
    quant_speed: f64,
    quant_direction: f64,
    t_end: f64,
    dt: f64,
    max_uq_samples: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let e = state.engine();
    let h = Health {
        status: "ready",
        version: env!("CARGO_PKG_VERSION"),
        mesh_hash: e.mesh_hash(),
        podi_hash: e.artifact_hash(ModelKind::Podi).unwrap_or_default(),
        podg_hash: e.artifact_hash(ModelKind::Podg),
        bounds: e.bounds(),
        uptime_seconds: state.started.elapsed().as_secs_f64(),
        cache_size: state.cache_len(),
        cache_capacity: state.config.cache_size,
        quant_speed: state.config.quant_speed,
        quant_direction: state.config.quant_direction,
        t_end: e.transport().t_end,
        dt: e.transport().dt,
        max_uq_samples: state.config.max_uq_samples,
    };
    json_response(Bytes::from(serde_json::to_vec(&h).expect("health document serializes")), None)
}

async fn mesh(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let id = state.next_id();
    Ok(json_response(to_bytes(&state.engine().mesh_payload(), &id)?, None))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    pub w_i: f64,
    #[serde(default)]
    pub w_d: Option<f64>,
    #[serde(default)]
    pub times: Vec<f64>,
    pub field: Field,
    #[serde(default)]
    pub model: ModelKind,
}

async fn evaluate(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let id = state.next_id();
    let t0 = Instant::now();
    let req: EvaluateRequest = parse(&body, &id)?;
    let engine = state.engine.clone();
    if !engine.has(req.model) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", "the requested model is not loaded", &id));
    }
    let raw = ParameterPoint { w_i: req.w_i, w_d: req.w_d };
    raw.validate().map_err(|e| ApiError::from_core(e, &id))?;
    if req.field == Field::Concentration {
        if req.times.is_empty() {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", "times must not be empty", &id));
        }
        engine.check_times(&req.times).map_err(|e| ApiError::from_core(e, &id))?;
    }
    let mu = state.quantize(req.w_i, req.w_d);
    let times = if req.field == Field::Concentration { req.times.clone() } else { Vec::new() };
    let key = CacheKey {
        field: req.field,
        model: req.model,
        w_i: mu.w_i.to_bits(),
        w_d: mu.w_d.map(f64::to_bits),
        times: times.iter().map(|t| t.to_bits()).collect(),
    };
    if let Some(cache) = &state.cache {
        if let Some(hit) = cache.lock().unwrap().get(&key).cloned() {
            info!("{id} POST /evaluate mu={mu} field={:?} cache=hit {:.1}ms", req.field, t0.elapsed().as_secs_f64() * 1e3);
            return Ok(json_response(hit, Some("hit")));
        }
    }
    let (field, model) = (req.field, req.model);
    let payload = run_bounded(&state, &id, move || engine.evaluate(&mu, field, &times, model)).await?;
    let bytes = to_bytes(&payload, &id)?;
    if let Some(cache) = &state.cache {
        cache.lock().unwrap().put(key, bytes.clone());
    }
    info!("{id} POST /evaluate mu={mu} field={field:?} cache=miss {:.1}ms", t0.elapsed().as_secs_f64() * 1e3);
    Ok(json_response(bytes, Some("miss")))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqRequest {
    pub w_i: Uniform,
    #[serde(default)]
    pub w_d: Option<Uniform>,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_of_bounds: OutOfBounds,
    pub times: Vec<f64>,
    #[serde(default)]
    pub model: ModelKind,
}

async fn uq(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let id = state.next_id();
    let t0 = Instant::now();
    let req: UqRequest = parse(&body, &id)?;
    if req.samples > state.config.max_uq_samples {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_request",
            format!("samples = {} exceeds the limit of {}", req.samples, state.config.max_uq_samples),
            &id,
        ));
    }
    let spec = UncertaintySpec { w_i: req.w_i, w_d: req.w_d, samples: req.samples, seed: req.seed, out_of_bounds: req.out_of_bounds };
    spec.validate().map_err(|e| ApiError::from_core(e, &id))?;
    let engine = state.engine.clone();
    if !engine.has(req.model) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", "the requested model is not loaded", &id));
    }
    if req.times.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", "times must not be empty", &id));
    }
    engine.check_times(&req.times).map_err(|e| ApiError::from_core(e, &id))?;
    let (times, model) = (req.times, req.model);
    let payload = run_bounded(&state, &id, move || engine.uq(&spec, &times, model)).await?;
    info!("{id} POST /uq samples={} seed={} {:.1}ms", spec.samples, spec.seed, t0.elapsed().as_secs_f64() * 1e3);
    Ok(json_response(to_bytes(&payload, &id)?, None))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/mesh", get(mesh))
        .route("/evaluate", post(evaluate))
        .route("/uq", post(uq))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
