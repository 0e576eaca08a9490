use std::convert::Infallible;
use std::fmt::Debug;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use nemesys_core::dci::{Filter, Page};
use nemesys_core::detect::{Alert, AttackClass};
use nemesys_core::netsim::{build_scenario, AttackConfig, ScenarioConfig};
use nemesys_core::{Error, Scope};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::runs::{self, NetworkStats, RunInfo, RunStatus};
use crate::AppState;

const DEFAULT_PAGE: usize = 100;
const MAX_PAGE: usize = 10_000;

pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

/// Name of an error enum variant, from its `Debug` form.
fn variant(e: &impl Debug) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect()
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Sim(x) => variant(x),
            Error::Attack(x) => variant(x),
            Error::Feature(x) => variant(x),
            Error::Detect(x) => variant(x),
            Error::Dci(x) => variant(x),
            Error::Honey(x) => variant(x),
        };
        let status = if e.is_validation() { StatusCode::BAD_REQUEST } else { StatusCode::INTERNAL_SERVER_ERROR };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/v1/alerts", get(list_alerts))
        .route("/api/v1/alerts/{id}/ack", post(ack_alert))
        .route("/api/v1/traces", get(query_traces))
        .route("/api/v1/stats/network", get(network_stats))
        .route("/api/v1/sim/runs", get(list_runs))
        .route("/api/v1/sim/run", post(start_run))
        .route("/api/v1/sim/attack", post(add_attack))
        .route("/api/v1/stream", get(stream_alerts))
        .with_state(state.clone());
    match &state.0.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AlertQuery {
    /// Only alerts with a larger id.
    since: Option<u64>,
    class: Option<String>,
    scope: Option<String>,
    acked: Option<bool>,
}

async fn list_alerts(State(s): State<AppState>, q: Result<Query<AlertQuery>, QueryRejection>) -> ApiResult<Json<Vec<Alert>>> {
    let Query(q) = q?;
    let class: Option<AttackClass> = q.class.map(|c| c.parse().map_err(ApiError::bad_request)).transpose()?;
    let scope: Option<Scope> = q.scope.map(|c| c.parse().map_err(ApiError::bad_request)).transpose()?;
    let since = q.since.unwrap_or(0);
    let alerts = s.0.alerts.read().unwrap_or_else(|e| e.into_inner());
    let out = alerts
        .iter()
        .filter(|a| a.alert_id > since)
        .filter(|a| class.is_none_or(|c| a.attack_class == c))
        .filter(|a| scope.is_none_or(|sc| a.scope == sc))
        .filter(|a| q.acked.is_none_or(|k| a.acked == k))
        .cloned()
        .collect();
    Ok(Json(out))
}

async fn ack_alert(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Alert>> {
    let id: u64 = id.parse().map_err(|_| ApiError::bad_request(format!("alert id {id:?} is not a number")))?;
    let mut alerts = s.0.alerts.write().unwrap_or_else(|e| e.into_inner());
    let alert = id
        .checked_sub(1)
        .and_then(|i| alerts.get_mut(i as usize))
        .ok_or_else(|| ApiError::not_found(format!("no alert {id}")))?;
    alert.acked = true;
    Ok(Json(alert.clone()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceQuery {
    filter: Option<String>,
    limit: Option<usize>,
    after_id: Option<u64>,
}

async fn query_traces(State(s): State<AppState>, q: Result<Query<TraceQuery>, QueryRejection>) -> ApiResult<Json<Page>> {
    let Query(q) = q?;
    let filter: Filter = match q.filter.as_deref() {
        Some(text) => text.parse().map_err(Error::from)?,
        None => Filter::all(),
    };
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("limit must lie in 1..={MAX_PAGE}")));
    }
    let store = s.0.traces.read().unwrap_or_else(|e| e.into_inner());
    Ok(Json(store.query(&filter, Some(limit), q.after_id)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsQuery {
    run_id: Option<String>,
}

/// Statistics of `run_id`, or of the latest finished run.
async fn network_stats(State(s): State<AppState>, q: Result<Query<StatsQuery>, QueryRejection>) -> ApiResult<Json<NetworkStats>> {
    let Query(q) = q?;
    let mut runs = s.0.runs.lock().unwrap_or_else(|e| e.into_inner());
    let stats = match &q.run_id {
        Some(id) => {
            let entry = runs.get_mut(id).ok_or_else(|| ApiError::not_found(format!("no run {id}")))?;
            entry.stats.clone().ok_or_else(|| {
                ApiError::new(StatusCode::CONFLICT, "RunNotDone", format!("run {id} is {:?}", entry.info.status))
            })?
        }
        None => runs.latest_done().and_then(|e| e.stats.clone()).ok_or_else(|| ApiError::not_found("no finished run"))?,
    };
    Ok(Json(stats))
}

async fn list_runs(State(s): State<AppState>) -> Json<Vec<RunInfo>> {
    let runs = s.0.runs.lock().unwrap_or_else(|e| e.into_inner());
    Json(runs.entries.values().map(|e| e.info.clone()).collect())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    /// Starts this idle run instead of creating one.
    run_id: Option<String>,
    scenario: Option<ScenarioConfig>,
    seed: Option<u64>,
    /// Leave the new run idle so attacks can be added first.
    #[serde(default = "yes")]
    start: bool,
    /// Respond only once the run is done.
    #[serde(default)]
    wait: bool,
}

fn yes() -> bool {
    true
}

async fn start_run(State(s): State<AppState>, body: Result<Json<RunRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let info = match &req.run_id {
        Some(id) => {
            if req.scenario.is_some() || req.seed.is_some() || !req.start {
                return Err(ApiError::bad_request("an existing run takes no scenario, seed or start flag"));
            }
            let mut runs = s.0.runs.lock().unwrap_or_else(|e| e.into_inner());
            let entry = runs.get_mut(id).ok_or_else(|| ApiError::not_found(format!("no run {id}")))?;
            if entry.info.status != RunStatus::Idle {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "InvalidTransition",
                    format!("run {id} is {:?}, not IDLE", entry.info.status),
                ));
            }
            entry.info.clone()
        }
        None => {
            let mut config = req.scenario.clone().unwrap_or_else(|| s.0.scenario.clone());
            if let Some(seed) = req.seed {
                config.seed = seed;
            }
            build_scenario(&config)?;
            s.0.runs.lock().unwrap_or_else(|e| e.into_inner()).create(config)
        }
    };
    if !req.start {
        return Ok((StatusCode::CREATED, Json(info)).into_response());
    }
    let done = launch(&s, &info.run_id);
    if req.wait {
        let _ = done.await;
        let mut runs = s.0.runs.lock().unwrap_or_else(|e| e.into_inner());
        let info = runs.get_mut(&info.run_id).map(|e| e.info.clone()).expect("run exists");
        return Ok((StatusCode::OK, Json(info)).into_response());
    }
    let mut runs = s.0.runs.lock().unwrap_or_else(|e| e.into_inner());
    let info = runs.get_mut(&info.run_id).map(|e| e.info.clone()).expect("run exists");
    Ok((StatusCode::ACCEPTED, Json(info)).into_response())
}

/// Marks the run RUNNING and executes it in the background. The receiver
/// fires once the run is DONE.
fn launch(s: &AppState, run_id: &str) -> tokio::sync::oneshot::Receiver<()> {
    let (tx, rx) = tokio::sync::oneshot::channel();
    let config = {
        let mut runs = s.0.runs.lock().unwrap_or_else(|e| e.into_inner());
        let entry = runs.get_mut(run_id).expect("run exists");
        entry.info.status = RunStatus::Running;
        entry.config.clone()
    };
    let state = s.clone();
    let id = run_id.to_string();
    let detector = s.0.detector.clone();
    s.0.tasks.lock().unwrap_or_else(|e| e.into_inner()).spawn(async move {
        let job_id = id.clone();
        let outcome = tokio::task::spawn_blocking(move || runs::execute(&job_id, &config, &detector)).await;
        let (stats, alert_ids, classes, error) = match outcome {
            Ok(Ok(out)) => {
                let mut classes = std::collections::BTreeMap::new();
                for a in &out.alerts {
                    *classes.entry(a.attack_class).or_insert(0) += 1;
                }
                let ids = state.publish(out.alerts);
                (Some(out.stats), ids, classes, None)
            }
            Ok(Err(e)) => (None, vec![], Default::default(), Some(e.to_string())),
            Err(e) => (None, vec![], Default::default(), Some(e.to_string())),
        };
        if let Some(e) = &error {
            tracing::error!(run = %id, "run failed: {e}");
        }
        let mut runs = state.0.runs.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(entry) = runs.get_mut(&id) {
            entry.info.status = RunStatus::Done;
            entry.info.alert_ids = alert_ids;
            entry.info.alert_classes = classes;
            entry.info.error = error;
            entry.stats = stats;
        }
        drop(runs);
        let _ = tx.send(());
    });
    rx
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttackRequest {
    run_id: String,
    attack: AttackConfig,
}

async fn add_attack(State(s): State<AppState>, body: Result<Json<AttackRequest>, JsonRejection>) -> ApiResult<Json<RunInfo>> {
    let Json(req) = body?;
    let mut runs = s.0.runs.lock().unwrap_or_else(|e| e.into_inner());
    let entry = runs.get_mut(&req.run_id).ok_or_else(|| ApiError::not_found(format!("no run {}", req.run_id)))?;
    if entry.info.status != RunStatus::Idle {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "InvalidTransition",
            format!("attacks can only be added to an IDLE run; {} is {:?}", req.run_id, entry.info.status),
        ));
    }
    let mut config = entry.config.clone();
    config.attacks.push(req.attack);
    build_scenario(&config)?;
    entry.info.attacks = config.attacks.clone();
    entry.config = config;
    Ok(Json(entry.info.clone()))
}

fn sse_event(a: &Alert) -> Result<Event, Infallible> {
    Ok(Event::default()
        .event("alert")
        .id(a.alert_id.to_string())
        .data(serde_json::to_string(a).unwrap_or_default()))
}

/// Replay window, then live alerts until the client leaves or the service
/// shuts down. `Last-Event-ID` skips alerts the client already has.
async fn stream_alerts(State(s): State<AppState>, headers: HeaderMap) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let after = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse().ok());
    let (replay, rx) = s.0.hub.subscribe(after);
    let shutdown = s.0.shutdown.subscribe();
    let live = stream::unfold((rx, shutdown), |(mut rx, mut shutdown)| async move {
        if *shutdown.borrow() {
            return None;
        }
        tokio::select! {
            a = rx.recv() => a.map(|a| (sse_event(&a), (rx, shutdown))),
            _ = shutdown.changed() => None,
        }
    });
    let replayed = stream::iter(replay.iter().map(sse_event).collect::<Vec<_>>());
    Sse::new(replayed.chain(live)).keep_alive(KeepAlive::default())
}
