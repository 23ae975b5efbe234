//! HTTP front end: deploy, invoke (cold or warm), list, remove and usage.
//!
//! Guest failures are reported as `200` with `X-Exit-Class`; only platform
//! faults produce `5xx`.

pub mod config;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{HeaderMap, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;

use wasmless::executor::{
    Executor, ExecutorError, Preopen, ResourceLimits, SandboxSpec, StartMode,
};
use wasmless::metering::{self, Ledger, MeteringError, UsageRecord};
use wasmless::registry::{self, Registry, RegistryError};
use wasmless::wasm_tools::ModuleError;

pub use config::{ConfigInvalid, GatewayConfig};

pub const HEADER_EXIT_CLASS: &str = "x-exit-class";
pub const HEADER_FUEL_CONSUMED: &str = "x-fuel-consumed";
pub const HEADER_WALL_TIME_US: &str = "x-wall-time-us";
pub const HEADER_SETUP_TIME_US: &str = "x-setup-time-us";
pub const HEADER_BILLED_AMOUNT: &str = "x-billed-amount";
pub const HEADER_INVOCATION_ID: &str = "x-invocation-id";
pub const HEADER_START_MODE: &str = "x-start-mode";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigInvalid),
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Metering(#[from] MeteringError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("server failed: {0}")]
    Serve(std::io::Error),
}

/// Shared state behind every handler.
pub struct AppState {
    pub config: GatewayConfig,
    pub registry: Registry,
    pub executor: Executor,
    pub ledger: Ledger,
}

impl AppState {
    /// Opens the registry and ledger under `config.data_dir`.
    pub fn open(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.check()?;
        config.prepare_data_dir()?;
        let registry = Registry::open(&config.data_dir)?;
        let executor = Executor::with_schedule(config.pool_capacity, registry.schedule().clone())?;
        let ledger = Ledger::open(&config.data_dir, config.fsync_ledger)?;
        Ok(AppState {
            config,
            registry,
            executor,
            ledger,
        })
    }
}

/// A bound, not yet serving gateway.
pub struct Gateway {
    listener: TcpListener,
    state: Arc<AppState>,
}

impl Gateway {
    pub async fn bind(config: GatewayConfig) -> Result<Self, GatewayError> {
        let addr = config.socket_addr()?;
        let listen_addr = config.listen_addr.clone();
        let state = tokio::task::spawn_blocking(move || AppState::open(config))
            .await
            .expect("state setup panicked")?;
        let listener =
            TcpListener::bind(addr)
                .await
                .map_err(|source| GatewayError::BindFailure {
                    addr: listen_addr,
                    source,
                })?;
        Ok(Gateway {
            listener,
            state: Arc::new(state),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener
            .local_addr()
            .expect("bound listener has an address")
    }

    pub fn state(&self) -> Arc<AppState> {
        self.state.clone()
    }

    /// Serves until `shutdown` resolves, then drains in-flight requests.
    pub async fn run(
        self,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> Result<(), GatewayError> {
        axum::serve(self.listener, router(self.state))
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(GatewayError::Serve)
    }
}

/// Binds and serves `config` until `shutdown` resolves.
pub async fn serve(
    config: GatewayConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), GatewayError> {
    let gateway = Gateway::bind(config).await?;
    log::info!("listening on {}", gateway.local_addr());
    gateway.run(shutdown).await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/healthz", get(|| async { "ok" }))
        .route("/v1/functions", post(deploy).get(list))
        .route("/v1/functions/{name}", axum::routing::delete(remove))
        .route("/v1/functions/{name}/invoke", post(invoke))
        .route("/v1/functions/{name}/usage", get(usage))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = match &e {
            RegistryError::NameInvalid(_)
            | RegistryError::Limits(_)
            | RegistryError::Preopen(_) => StatusCode::BAD_REQUEST,
            RegistryError::Module(ModuleError::InvalidSchedule(_)) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            RegistryError::Module(_) => StatusCode::UNPROCESSABLE_ENTITY,
            RegistryError::NotFound(_) => StatusCode::NOT_FOUND,
            RegistryError::StorageFailure(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<MeteringError> for ApiError {
    fn from(e: MeteringError) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<ExecutorError> for ApiError {
    fn from(e: ExecutorError) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn query_pairs(query: &Option<String>) -> Vec<(String, String)> {
    form_urlencoded::parse(query.as_deref().unwrap_or("").as_bytes())
        .into_owned()
        .collect()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn parse_number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ApiError> {
    value
        .parse()
        .map_err(|_| bad_request(format!("`{key}` must be a nonnegative integer")))
}

/// `POST /v1/functions?name=<n>`; optional `fuel_limit`, `memory_limit_pages`,
/// `wall_timeout_ms` and repeated `preopen=<host_dir>:<guest_path>`.
async fn deploy(
    State(state): State<Arc<AppState>>,
    RawQuery(query): RawQuery,
    body: Bytes,
) -> Result<Response, ApiError> {
    let mut name = None;
    let mut limits = state.config.default_limits;
    let mut preopens = Vec::new();
    for (key, value) in query_pairs(&query) {
        match key.as_str() {
            "name" => name = Some(value),
            "fuel_limit" => limits.fuel_limit = parse_number(&key, &value)?,
            "memory_limit_pages" => limits.memory_limit_pages = parse_number(&key, &value)?,
            "wall_timeout_ms" => limits.wall_timeout_ms = parse_number(&key, &value)?,
            "preopen" => {
                let (host, guest) = value
                    .rsplit_once(':')
                    .ok_or_else(|| bad_request("`preopen` must be <host_dir>:<guest_path>"))?;
                preopens.push(Preopen::new(PathBuf::from(host), guest));
            }
            other => return Err(bad_request(format!("unknown parameter `{other}`"))),
        }
    }
    let name = name.ok_or_else(|| bad_request("missing `name` parameter"))?;
    let manifest =
        blocking(move || Ok(state.registry.deploy(&name, &body, limits, preopens)?)).await?;
    log::info!("deployed {} ({})", manifest.name, manifest.content_hash);
    Ok((StatusCode::CREATED, Json(manifest)).into_response())
}

async fn list(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let manifests = blocking(move || Ok(state.registry.list()?)).await?;
    Ok(Json(manifests).into_response())
}

async fn remove(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> Result<StatusCode, ApiError> {
    blocking(move || Ok(state.registry.remove(&name)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn usage(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> Result<Response, ApiError> {
    let aggregate = blocking(move || {
        let totals = state.ledger.totals(&name);
        if totals.record_count == 0 && !registry::is_valid_name(&name) {
            return Err(RegistryError::NotFound(name).into());
        }
        if totals.record_count == 0 {
            state.registry.lookup(&name)?;
        }
        Ok(totals.aggregate(&name, &state.config.pricing))
    })
    .await?;
    Ok(Json(aggregate).into_response())
}

/// `POST /v1/functions/{name}/invoke?mode=cold|warm&arg=..`; the body is
/// the guest's stdin and the response body its stdout.
async fn invoke(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
    RawQuery(query): RawQuery,
    body: Bytes,
) -> Result<Response, ApiError> {
    let mut mode = StartMode::Warm;
    let mut argv = vec![name.clone()];
    for (key, value) in query_pairs(&query) {
        match key.as_str() {
            "mode" => mode = value.parse().map_err(bad_request)?,
            "arg" => argv.push(value),
            other => return Err(bad_request(format!("unknown parameter `{other}`"))),
        }
    }

    let (result, record, amount) = blocking(move || {
        let manifest = state.registry.lookup(&name)?;
        let artifact = state.registry.load_artifact(&manifest)?;
        let spec = SandboxSpec {
            argv,
            env: Default::default(),
            stdin_bytes: body.to_vec(),
            preopens: manifest.preopens.clone(),
        };
        let limits: ResourceLimits = manifest.limits;
        let result = state.executor.execute(&artifact, &spec, &limits, mode)?;
        let record: UsageRecord = state.ledger.record(&result, &name)?;
        let amount = metering::format_amount(&metering::price(&record, &state.config.pricing));
        Ok((result, record, amount))
    })
    .await?;

    let mut headers = HeaderMap::new();
    let mut put = |name: &'static str, value: String| {
        headers.insert(
            HeaderName::from_static(name),
            HeaderValue::from_str(&value).expect("header values are ascii"),
        );
    };
    put(HEADER_EXIT_CLASS, record.exit_class.to_string());
    put(HEADER_FUEL_CONSUMED, record.fuel_consumed.to_string());
    put(HEADER_WALL_TIME_US, record.wall_time_us.to_string());
    put(HEADER_SETUP_TIME_US, result.t_setup_us.to_string());
    put(HEADER_BILLED_AMOUNT, amount);
    put(HEADER_INVOCATION_ID, record.invocation_id.clone());
    put(HEADER_START_MODE, result.start_mode.to_string());
    headers.insert(
        axum::http::header::CONTENT_TYPE,
        HeaderValue::from_static("application/octet-stream"),
    );
    Ok((StatusCode::OK, headers, result.stdout).into_response())
}

/// Resolves on SIGTERM or Ctrl-C.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                log::error!("cannot install SIGTERM handler: {e}");
                std::future::pending::<()>().await
            }
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutdown requested, draining in-flight requests");
}
