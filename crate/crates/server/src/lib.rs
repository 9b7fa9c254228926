//! HTTP/JSON front end of the mmhybrid solvers. See `mmhybrid_api` for the
//! routes and their bodies.

mod jobs;

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mmhybrid_api::{
    ApiError, CsvKind, DecayRate, DecayRateRequest, ErrorKind, Health, JobStatus, Maxwellian,
    MaxwellianRequest, Remainder, RemainderRequest, RunConfig, RunRecord, RunSubmitted, StencilRow,
};
use mmhybrid_core::coupling::{compute_remainder, PrimalField, StencilTable, STENCIL};
use mmhybrid_core::diagnostics::{decay_rate, default_decay_window, truncate_window};
use mmhybrid_core::mesh::{build_mesh, DiscreteMaxwellian};
use mmhybrid_core::output;
use tokio::net::TcpListener;
use uuid::Uuid;

use jobs::{Jobs, RecordLookup};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Simulations allowed to step at the same time.
    pub workers: usize,
    /// Jobs kept in memory; the oldest finished one is dropped when full.
    pub max_jobs: usize,
    /// Upper bound on `nx * nv` for submitted runs.
    pub max_cells: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            max_jobs: 256,
            max_cells: 1 << 22,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    jobs: Arc<Jobs>,
    config: Arc<ServerConfig>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            jobs: Arc::new(Jobs::new(config.workers, config.max_jobs)),
            config: Arc::new(config),
        }
    }
}

/// Error response: a status code with an [`ApiError`] body.
#[derive(Debug)]
pub struct AppError(StatusCode, ApiError);

impl AppError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self::from(ApiError::new(kind, message))
    }
}

impl From<ApiError> for AppError {
    fn from(e: ApiError) -> Self {
        let status = match e.kind {
            ErrorKind::Config | ErrorKind::InvalidInput => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Overloaded => StatusCode::SERVICE_UNAVAILABLE,
            ErrorKind::Numerical | ErrorKind::Cancelled | ErrorKind::Internal => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self(status, e)
    }
}

impl From<mmhybrid_core::Error> for AppError {
    fn from(e: mmhybrid_core::Error) -> Self {
        Self::from(ApiError::from(&e))
    }
}

impl From<JsonRejection> for AppError {
    fn from(e: JsonRejection) -> Self {
        Self(e.status(), ApiError::new(ErrorKind::Config, e.body_text()))
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, AppError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/runs", post(submit_run).get(list_runs))
        .route("/runs/{id}", get(run_status).delete(cancel_run))
        .route("/runs/{id}/record", get(run_record))
        .route("/runs/{id}/csv/{table}", get(run_csv))
        .route("/maxwellian", post(maxwellian))
        .route("/stencil/{order}", get(stencil))
        .route("/remainder", post(remainder))
        .route("/decay-rate", post(decay))
        .with_state(state)
}

/// Serves until `shutdown` resolves. Running jobs are abandoned.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "listening");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn submit_run(
    State(state): State<AppState>,
    body: Result<Json<RunConfig>, JsonRejection>,
) -> Result<(StatusCode, Json<RunSubmitted>), AppError> {
    let Json(mut config) = body?;
    let mut warnings = config.validate()?;
    let cells = config.nx.saturating_mul(config.nv);
    if cells > state.config.max_cells {
        return Err(AppError::new(
            ErrorKind::Config,
            format!(
                "nx * nv = {cells} exceeds this server's limit of {}",
                state.config.max_cells
            ),
        ));
    }
    if config.out.take().is_some() {
        warnings.push("out is ignored by the service; fetch tables from /runs/{id}/csv".into());
    }
    let id = state.jobs.submit(config, warnings.clone())?;
    Ok((StatusCode::ACCEPTED, Json(RunSubmitted { id, warnings })))
}

fn not_found(id: Uuid) -> AppError {
    AppError::new(ErrorKind::NotFound, format!("no run {id}"))
}

async fn list_runs(State(state): State<AppState>) -> Json<Vec<JobStatus>> {
    Json(state.jobs.list())
}

async fn run_status(State(state): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<JobStatus> {
    state.jobs.status(id).map(Json).ok_or_else(|| not_found(id))
}

async fn cancel_run(State(state): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<JobStatus> {
    state.jobs.cancel(id).map(Json).ok_or_else(|| not_found(id))
}

fn finished_record(state: &AppState, id: Uuid) -> Result<Arc<RunRecord>, AppError> {
    match state.jobs.record(id) {
        RecordLookup::Ready(r) => Ok(r),
        RecordLookup::Missing => Err(not_found(id)),
        RecordLookup::NotReady(s) => Err(AppError::new(
            ErrorKind::Conflict,
            format!("run {id} has no record (state {s:?})"),
        )),
    }
}

async fn run_record(State(state): State<AppState>, Path(id): Path<Uuid>) -> Response {
    match finished_record(&state, id) {
        Ok(r) => Json(&*r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn run_csv(
    State(state): State<AppState>,
    Path((id, table)): Path<(Uuid, String)>,
) -> Result<Response, AppError> {
    let kind: CsvKind = table.parse()?;
    let record = finished_record(&state, id)?;
    let body = output::table(&record, kind)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], body).into_response())
}

async fn maxwellian(body: Result<Json<MaxwellianRequest>, JsonRejection>) -> ApiResult<Maxwellian> {
    let Json(req) = body?;
    // the space mesh is irrelevant here; use the smallest one allowed
    let mesh = build_mesh(
        mmhybrid_core::mesh::MIN_NX,
        req.nv,
        std::f64::consts::PI,
        req.v_star,
    )?;
    let m = DiscreteMaxwellian::new(&mesh);
    Ok(Json(Maxwellian {
        v_centers: mesh.v_centers.clone(),
        values: m.values,
        m0: m.m0,
        m2: m.m2,
        m4: m.m4,
        m1p: m.m1p,
    }))
}

async fn stencil(Path(order): Path<usize>) -> ApiResult<StencilRow> {
    Ok(Json(StencilRow {
        order,
        fractions: StencilTable::fractions(order)?.to_vec(),
        coefficients: STENCIL.row(order)?.to_vec(),
    }))
}

async fn remainder(body: Result<Json<RemainderRequest>, JsonRejection>) -> ApiResult<Remainder> {
    let Json(req) = body?;
    let nx = req.rho.len();
    let mesh = build_mesh(nx, 4, req.x_star, 1.0)?;
    let per_cell = |name: &str, v: Option<Vec<f64>>| match v {
        None => Ok(vec![0.0; nx]),
        Some(v) if v.len() == nx => Ok(v),
        Some(v) => Err(AppError::new(
            ErrorKind::InvalidInput,
            format!("{name} has {} values, rho has {nx}", v.len()),
        )),
    };
    let eps = match req.eps.as_slice() {
        [e] => vec![*e; nx],
        _ => per_cell("eps", Some(req.eps))?,
    };
    if let Some(e) = eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(AppError::new(
            ErrorKind::InvalidInput,
            format!("eps = {e} must be positive"),
        ));
    }
    let field = PrimalField {
        e: per_cell("e", req.e)?,
        de: per_cell("de", req.de)?,
        d2e: per_cell("d2e", req.d2e)?,
        d3e: per_cell("d3e", req.d3e)?,
    };
    let remainder = compute_remainder(&req.rho, &field, &eps, &mesh);
    Ok(Json(Remainder {
        x_centers: mesh.x_centers.clone(),
        remainder,
    }))
}

async fn decay(body: Result<Json<DecayRateRequest>, JsonRejection>) -> ApiResult<DecayRate> {
    let Json(req) = body?;
    let window = match (req.window, req.eps) {
        (Some(w), _) => w,
        (None, Some(eps)) => default_decay_window(eps),
        (None, None) => {
            return Err(AppError::new(
                ErrorKind::InvalidInput,
                "give either a window or eps",
            ))
        }
    };
    let window = match req.floor {
        Some(floor) => truncate_window(&req.series, window, floor),
        None => window,
    };
    let slope = decay_rate(&req.series, window)?;
    let samples = req
        .series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .count();
    Ok(Json(DecayRate {
        slope,
        window,
        samples,
    }))
}
