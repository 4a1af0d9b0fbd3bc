//! HTTP front end serving local denoise backends over the textailor wire
//! protocol.
//!
//! Besides the analytic and toy backends there is an echo model (returns the
//! request tensor as the noise estimate) and a set of injectable faults, which
//! together make a conformance harness for protocol clients.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use textailor::denoise::protocol::{
    encode_f32, DenoiseRequest, DenoiseResponse, HealthResponse, DENOISE_PATH, HEALTH_PATH, SCHEMA,
};
use textailor::denoise::{analytic_predict, Conditioning, DenoiseError, Denoiser, ToyDenoiser};
use textailor::latent::Latent;
use textailor::sched::NoiseSchedule;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

/// Default cap on `C·h·w` per request.
pub const DEFAULT_MAX_ELEMENTS: usize = 4 * 128 * 128;

/// A named noise predictor.
pub struct Model {
    id: String,
    denoiser: Box<dyn Denoiser + Send + Sync>,
}

impl Model {
    pub fn new(id: impl Into<String>, denoiser: impl Denoiser + Send + Sync + 'static) -> Self {
        Self {
            id: id.into(),
            denoiser: Box::new(denoiser),
        }
    }

    pub fn echo() -> Self {
        Self::new("echo", Echo)
    }

    /// Gaussian posterior-mean predictor whose data mean is a flat color,
    /// shaped to whatever latent the request carries.
    pub fn analytic(sched: NoiseSchedule, color: [f64; 3], sigma0: f64) -> Result<Self, DenoiseError> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(DenoiseError::Backend(format!("sigma0 must be positive, got {sigma0}")));
        }
        let id = format!(
            "analytic-rgb({:.3},{:.3},{:.3})-s{sigma0}",
            color[0], color[1], color[2]
        );
        Ok(Self::new(id, FlatGaussian { sched, color, sigma0 }))
    }

    pub fn toy(net: ToyDenoiser) -> Self {
        let id = format!("toy-{}p", net.params().len());
        Self::new(id, net)
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

/// Returns `z_t` unchanged.
#[derive(Debug, Clone, Copy)]
pub struct Echo;

impl Denoiser for Echo {
    fn predict(&self, z_t: &Latent, _t: usize, _cond: &Conditioning) -> Result<Latent, DenoiseError> {
        Ok(z_t.clone())
    }
}

struct FlatGaussian {
    sched: NoiseSchedule,
    color: [f64; 3],
    sigma0: f64,
}

impl Denoiser for FlatGaussian {
    fn predict(&self, z_t: &Latent, t: usize, _cond: &Conditioning) -> Result<Latent, DenoiseError> {
        let a = self
            .sched
            .alpha_bar_at(t)
            .map_err(|e| DenoiseError::Backend(e.to_string()))?;
        let [c, h, w] = z_t.shape();
        let mut mu = Latent::zeros([c, h, w]);
        for k in 0..c {
            let v = 2.0 * self.color[k % 3] - 1.0;
            for y in 0..h {
                for x in 0..w {
                    mu.set(k, y, x, v);
                }
            }
        }
        analytic_predict(z_t, a, &mu, self.sigma0)
    }
}

/// Deliberate misbehavior for exercising clients.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    /// Answer every request with this status.
    Status(u16),
    /// 503 for the first `n` requests, then behave.
    FailFirst(u64),
    /// 200 with a body that is not JSON.
    Garbage,
    /// Response shape with one channel too many.
    WrongShape,
    /// Response and health advertise another protocol version.
    WrongSchema,
    /// Response payload one value short.
    Truncated,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub max_elements: usize,
    pub fault: Option<Fault>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_elements: DEFAULT_MAX_ELEMENTS,
            fault: None,
        }
    }
}

/// Shared handler state. The model slot starts empty while a backend loads;
/// requests get 503 until [`AppState::install`] fills it.
pub struct AppState {
    model: OnceLock<Model>,
    cfg: ServerConfig,
    requests: AtomicU64,
}

impl AppState {
    pub fn loading(cfg: ServerConfig) -> Arc<Self> {
        Arc::new(Self {
            model: OnceLock::new(),
            cfg,
            requests: AtomicU64::new(0),
        })
    }

    pub fn ready(model: Model, cfg: ServerConfig) -> Arc<Self> {
        let state = Self::loading(cfg);
        state.install(model);
        state
    }

    /// Fills the model slot; later calls are ignored.
    pub fn install(&self, model: Model) {
        if self.model.set(model).is_err() {
            log::warn!("model already installed; ignoring replacement");
        }
    }

    /// Requests seen so far, faulted ones included.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    // base64 inflates 4 bytes to 5.33; the depth map and JSON keys add a
    // little more. Anything past this is refused before parsing.
    let limit = state.cfg.max_elements * 12 + 64 * 1024;
    Router::new()
        .route(HEALTH_PATH, post(health).get(health))
        .route(DENOISE_PATH, post(denoise))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    let msg = msg.into();
    log::info!("{status}: {msg}");
    (status, Json(serde_json::json!({ "error": msg }))).into_response()
}

/// Shared pre-amble of both handlers: counts the request and applies
/// status-type faults.
fn admit(state: &AppState) -> Result<&Model, Response> {
    let n = state.requests.fetch_add(1, Ordering::SeqCst);
    match state.cfg.fault {
        Some(Fault::Status(code)) => {
            let code = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            return Err(error(code, "injected fault"));
        }
        Some(Fault::FailFirst(k)) if n < k => {
            return Err(error(StatusCode::SERVICE_UNAVAILABLE, "injected transient fault"));
        }
        _ => {}
    }
    state
        .model
        .get()
        .ok_or_else(|| error(StatusCode::SERVICE_UNAVAILABLE, "model is loading"))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let model = match admit(&state) {
        Ok(m) => m,
        Err(r) => return r,
    };
    let schema = match state.cfg.fault {
        Some(Fault::WrongSchema) => "textailor-denoise/0".to_owned(),
        _ => SCHEMA.to_owned(),
    };
    Json(HealthResponse {
        schema,
        model_id: model.id.clone(),
    })
    .into_response()
}

async fn denoise(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    if let Err(r) = admit(&state) {
        return r;
    }
    let req: DenoiseRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("bad request body: {e}")),
    };
    let elements = req.shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    if elements.map_or(true, |n| n > state.cfg.max_elements) {
        return error(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("shape {:?} exceeds {} elements", req.shape, state.cfg.max_elements),
        );
    }
    let (z, t, cond) = match req.decode() {
        Ok(parts) => parts,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let worker = Arc::clone(&state);
    let eps = tokio::task::spawn_blocking(move || {
        let model = worker.model.get().expect("admitted requests have a model");
        model.denoiser.predict(&z, t, &cond)
    })
    .await;
    let eps = match eps {
        Ok(Ok(eps)) => eps,
        Ok(Err(e @ (DenoiseError::Shape(_) | DenoiseError::DepthShape { .. }))) => {
            return error(StatusCode::BAD_REQUEST, e.to_string())
        }
        Ok(Err(e)) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")),
    };
    let mut resp = DenoiseResponse::new(&eps);
    match state.cfg.fault {
        Some(Fault::Garbage) => return (StatusCode::OK, "{\"eps\": ").into_response(),
        Some(Fault::WrongShape) => resp.shape[0] += 1,
        Some(Fault::WrongSchema) => resp.schema = Some("textailor-denoise/0".into()),
        Some(Fault::Truncated) => {
            let d = eps.data();
            resp.eps = encode_f32(&d[..d.len().saturating_sub(1)]);
        }
        _ => {}
    }
    Json(resp).into_response()
}

/// Serves `state` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own thread and runtime; stops on drop.
pub struct Running {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl Running {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.thread.take() {
            match h.join() {
                Ok(Err(e)) => log::warn!("server exited with {e}"),
                Err(_) => log::warn!("server thread panicked"),
                Ok(Ok(())) => {}
            }
        }
    }
}

/// Binds `addr` (port 0 picks a free one) and serves on a background thread.
pub fn spawn(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<Running> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = rt.block_on(TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let thread = std::thread::Builder::new()
        .name("textailor-serve".into())
        .spawn(move || {
            rt.block_on(serve(listener, state, async {
                let _ = rx.await;
            }))
        })?;
    Ok(Running {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}
