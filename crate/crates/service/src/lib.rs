//! HTTP front end of the testbed.
//!
//! | route                          | purpose                                   |
//! |--------------------------------|-------------------------------------------|
//! | `GET  /api/v1/alerts`          | alerts with id above `since`              |
//! | `POST /api/v1/alerts/{id}/ack` | mark an alert acknowledged                |
//! | `GET  /api/v1/traces`          | filtered, paginated trace store query     |
//! | `GET  /api/v1/stats/network`   | signaling and station statistics of a run |
//! | `GET  /api/v1/sim/runs`        | all runs in creation order                |
//! | `POST /api/v1/sim/run`         | create and/or start a run                 |
//! | `POST /api/v1/sim/attack`      | add an attack to an idle run              |
//! | `GET  /api/v1/stream`          | alerts as server-sent events              |
//!
//! Errors are JSON `{"error": <code>, "message": <text>}` with status 400 for
//! bad input, 404 for unknown ids and 409 for a run in the wrong state.

mod hub;
mod routes;
mod runs;

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::Router;
use nemesys_core::dci::{DciError, TraceStore};
use nemesys_core::detect::{Alert, DetectorConfig};
use nemesys_core::netsim::ScenarioConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinSet;

pub use hub::AlertHub;
pub use runs::{NetworkStats, RatePoint, RunInfo, RunStatus, StationSummary};

/// Environment variable that overrides the configured listen address.
pub const BIND_ENV: &str = "NEMESYS_BIND";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("bad listen address {0:?}")]
    BadBind(String),
    #[error(transparent)]
    Store(#[from] DciError),
    #[error(transparent)]
    Core(#[from] nemesys_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Service configuration file (TOML). Relative paths are resolved against
/// the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Trace store directory; an in-memory store is used when absent.
    pub store_dir: Option<PathBuf>,
    /// Scenario used by `POST /api/v1/sim/run` without an inline scenario.
    pub scenario: Option<PathBuf>,
    pub detector: Option<PathBuf>,
    /// Static files served at `/`, typically the console build.
    pub static_dir: Option<PathBuf>,
    /// Alerts replayed to a newly connected stream subscriber.
    pub replay_buffer: usize,
    /// Time allowed for running simulations to finish on shutdown.
    pub shutdown_grace_s: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            store_dir: None,
            scenario: None,
            detector: None,
            static_dir: None,
            replay_buffer: 100,
            shutdown_grace_s: 10.0,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let bad = |msg: String| ServiceError::Config { path: path.display().to_string(), msg };
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let mut cfg: ServiceConfig = toml::from_str(&text).map_err(|e| bad(e.message().to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.store_dir, &mut cfg.scenario, &mut cfg.detector, &mut cfg.static_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// The listen address: `NEMESYS_BIND` when set, else `bind`.
    pub fn bind_addr(&self) -> Result<SocketAddr, ServiceError> {
        let raw = std::env::var(BIND_ENV).unwrap_or_else(|_| self.bind.clone());
        raw.parse().map_err(|_| ServiceError::BadBind(raw))
    }
}

pub(crate) struct Inner {
    pub config: ServiceConfig,
    pub scenario: ScenarioConfig,
    pub detector: DetectorConfig,
    pub alerts: RwLock<Vec<Alert>>,
    pub traces: RwLock<TraceStore>,
    pub runs: Mutex<runs::Runs>,
    pub hub: AlertHub,
    pub shutdown: watch::Sender<bool>,
    pub tasks: Mutex<JoinSet<()>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Inner>);

fn read_config<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T, String>) -> Result<T, ServiceError> {
    let bad = |msg: String| ServiceError::Config { path: path.display().to_string(), msg };
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    parse(&text).map_err(bad)
}

impl AppState {
    /// Loads the referenced scenario, detector config and trace store.
    pub fn from_config(config: ServiceConfig) -> Result<Self, ServiceError> {
        let scenario = match &config.scenario {
            Some(p) => read_config(p, |t| ScenarioConfig::from_toml_str(t).map_err(|e| e.to_string()))?,
            None => ScenarioConfig::default(),
        };
        let detector = match &config.detector {
            Some(p) => read_config(p, |t| DetectorConfig::from_toml_str(t).map_err(|e| e.to_string()))?,
            None => DetectorConfig::default(),
        };
        let store = match &config.store_dir {
            Some(dir) => TraceStore::open(dir)?,
            None => TraceStore::in_memory(),
        };
        Ok(Self::new(config, scenario, detector, store))
    }

    pub fn new(config: ServiceConfig, scenario: ScenarioConfig, detector: DetectorConfig, store: TraceStore) -> Self {
        let (shutdown, _) = watch::channel(false);
        AppState(Arc::new(Inner {
            hub: AlertHub::new(config.replay_buffer),
            config,
            scenario,
            detector,
            alerts: RwLock::new(Vec::new()),
            traces: RwLock::new(store),
            runs: Mutex::new(runs::Runs::default()),
            shutdown,
            tasks: Mutex::new(JoinSet::new()),
        }))
    }

    pub fn hub(&self) -> &AlertHub {
        &self.0.hub
    }

    /// Stores alerts under fresh ids and pushes them to stream subscribers,
    /// in that order. Returns the assigned ids.
    pub fn publish(&self, alerts: Vec<Alert>) -> Vec<u64> {
        let mut store = self.0.alerts.write().unwrap_or_else(|e| e.into_inner());
        let mut ids = Vec::with_capacity(alerts.len());
        for mut alert in alerts {
            alert.alert_id = store.len() as u64 + 1;
            alert.acked = false;
            ids.push(alert.alert_id);
            self.0.hub.publish(alert.clone());
            store.push(alert);
        }
        ids
    }

    pub fn router(&self) -> Router {
        routes::router(self.clone())
    }

    /// Ends open streams and waits up to the grace period for running
    /// simulations.
    pub async fn drain(&self) {
        let _ = self.0.shutdown.send(true);
        let mut tasks = std::mem::take(&mut *self.0.tasks.lock().unwrap_or_else(|e| e.into_inner()));
        let grace = Duration::from_secs_f64(self.0.config.shutdown_grace_s.max(0.0));
        if tokio::time::timeout(grace, async { while tasks.join_next().await.is_some() {} }).await.is_err() {
            tracing::warn!("simulations still running after {grace:?}; abandoning them");
            tasks.abort_all();
        }
    }
}

/// Serves until `signal` resolves, then shuts down gracefully.
pub async fn serve(listener: TcpListener, state: AppState, signal: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let app = state.router();
    let drain_state = state.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            signal.await;
            let _ = drain_state.0.shutdown.send(true);
        })
        .await?;
    state.drain().await;
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
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
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
