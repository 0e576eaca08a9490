use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use nemesys_core::detect::{
    feature_scales, labelled_windows, read_alerts_jsonl, rnn_train, write_alerts_jsonl, Alert, AttackClass, Baseline,
    Detector, DetectorConfig, RnnModel, TrainConfig, RNN_FEATURES,
};
use nemesys_core::features::{merge_records, write_features_jsonl, Record};
use nemesys_core::netsim::{build_scenario, read_cdr_csv, read_events_jsonl, run, write_cdr_csv, write_events_jsonl, ScenarioConfig};
use nemesys_core::Scope;
use nemesys_service::{serve as serve_http, shutdown_signal, AppState, ServiceConfig};
use serde::Serialize;

use crate::{emit, read_bytes, read_text, to_json_line, write_file, CliError};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::from_toml_str(&read_text(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub(crate) fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let cfg = load_scenario(&a.config, a.seed)?;
    let trace = run(&build_scenario(&cfg)?)?;
    let mut events = Vec::new();
    write_events_jsonl(&mut events, &trace.signaling)?;
    let mut cdr = Vec::new();
    write_cdr_csv(&mut cdr, &trace.cdrs)?;
    write_file(&a.out.join("events.jsonl"), &events)?;
    write_file(&a.out.join("cdr.csv"), &cdr)?;
    eprintln!(
        "{} signaling events, {} CDRs over {} s written to {}",
        trace.signaling.len(),
        trace.cdrs.len(),
        cfg.horizon_s,
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Signaling events (events.jsonl).
    #[arg(long)]
    pub events: PathBuf,
    /// CDRs; defaults to cdr.csv beside the events file when it exists.
    #[arg(long)]
    pub cdr: Option<PathBuf>,
    #[arg(long = "detector-config")]
    pub detector_config: Option<PathBuf>,
    /// RNN model (model.json); overrides the config.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Attack-free reference rates (baseline.json); overrides the config.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// End of the analysed span in seconds; defaults to the last record.
    #[arg(long)]
    pub until: Option<f64>,
    /// Alerts output (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-window features here.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Overrides the threshold calibration seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub(crate) fn detect(a: DetectArgs) -> Result<(), CliError> {
    let (mut cfg, cfg_dir) = match &a.detector_config {
        Some(p) => (
            DetectorConfig::from_toml_str(&read_text(p)?)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (DetectorConfig::default(), PathBuf::new()),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let model_path = a.model.clone().or_else(|| cfg.rnn.model.as_ref().map(|m| cfg_dir.join(m)));
    let baseline_path = a.baseline.clone().or_else(|| cfg.baseline.as_ref().map(|b| cfg_dir.join(b)));
    let model: Option<RnnModel> = model_path.as_deref().map(read_json).transpose()?;
    let baseline: Option<Baseline> = baseline_path.as_deref().map(read_json).transpose()?;

    let events = read_events_jsonl(read_bytes(&a.events)?.as_slice())?;
    let cdr_path = a.cdr.clone().or_else(|| {
        let sibling = a.events.with_file_name("cdr.csv");
        sibling.exists().then_some(sibling)
    });
    let cdrs = match &cdr_path {
        Some(p) => read_cdr_csv(read_bytes(p)?.as_slice())?,
        None => Vec::new(),
    };
    let records = merge_records(&events, &cdrs);
    let until = a.until.unwrap_or_else(|| records.iter().map(Record::ts).fold(0.0, f64::max)).max(cfg.window_s);

    let detector = Detector::new(cfg, baseline, model)?;
    let result = detector.run(&records, until)?;
    let mut out = Vec::new();
    write_alerts_jsonl(&mut out, &result.alerts)?;
    write_file(&a.out, &out)?;
    if let Some(p) = &a.features {
        let mut buf = Vec::new();
        write_features_jsonl(&mut buf, &result.features)?;
        write_file(p, &buf)?;
    }
    eprintln!("{} windows, {} alerts written to {}", result.features.len(), result.alerts.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scenario whose attack windows label the training data.
    #[arg(long)]
    pub config: PathBuf,
    /// Model output (model.json).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    /// Window width in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub window: f64,
    /// Seeds weight initialisation and sample order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub(crate) fn train(a: TrainArgs) -> Result<(), CliError> {
    if !(a.window > 0.0) {
        return Err(CliError::Invalid("--window must be > 0".into()));
    }
    let cfg = load_scenario(&a.config, None)?;
    let trace = run(&build_scenario(&cfg)?)?;
    let records = merge_records(&trace.signaling, &trace.cdrs);
    let attacks: Vec<_> = cfg.attacks.iter().map(|x| x.start_s..x.stop_s).collect();
    let mut dataset = labelled_windows(&records, cfg.horizon_s, a.window, Scope::Network, &attacks)?;
    if cfg.attach_detach {
        // Registration at t=0 and deregistration at the horizon fit neither class.
        let last = cfg.horizon_s - a.window;
        dataset.retain(|s| s.features.window_start >= a.window && s.features.window_start < last);
    }
    let scales = feature_scales(&RNN_FEATURES, &dataset);
    let inputs: Vec<(&str, f64)> = RNN_FEATURES.iter().copied().zip(scales).collect();
    let init = RnnModel::fully_connected(&inputs, a.hidden, 2, a.seed);
    let model = rnn_train(&init, &dataset, &TrainConfig { epochs: a.epochs, seed: a.seed, ..TrainConfig::default() })?;
    let mut correct = 0;
    for s in &dataset {
        correct += usize::from(model.verdict(&s.features, 0.0)?.alarmed == (s.target[0] > 0.5));
    }
    let json = serde_json::to_vec_pretty(&model).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&a.out, &json)?;
    eprintln!("{} windows, training accuracy {:.3}", dataset.len(), correct as f64 / dataset.len().max(1) as f64);
    Ok(())
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config (TOML); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub(crate) fn serve(a: ServeArgs) -> Result<(), CliError> {
    let config = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    let addr = config.bind_addr()?;
    let state = AppState::from_config(config)?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Runtime(format!("bind {addr}: {e}")))?;
        eprintln!("listening on {}", listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?);
        serve_http(listener, state, shutdown_signal()).await.map_err(|e| CliError::Runtime(e.to_string()))
    })
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Alerts file (JSON lines).
    #[arg(long)]
    pub alerts: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize)]
struct ClassSummary {
    count: usize,
    first_ts: f64,
    last_ts: f64,
    max_confidence: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    total: usize,
    acked: usize,
    classes: BTreeMap<AttackClass, ClassSummary>,
}

fn summarise(alerts: &[Alert]) -> Report {
    let mut classes: BTreeMap<AttackClass, ClassSummary> = BTreeMap::new();
    for a in alerts {
        let c = classes.entry(a.attack_class).or_insert(ClassSummary { first_ts: a.ts, ..Default::default() });
        c.count += 1;
        c.first_ts = c.first_ts.min(a.ts);
        c.last_ts = c.last_ts.max(a.ts);
        c.max_confidence = c.max_confidence.max(a.confidence);
    }
    Report { total: alerts.len(), acked: alerts.iter().filter(|a| a.acked).count(), classes }
}

pub(crate) fn report(a: ReportArgs) -> Result<(), CliError> {
    let alerts = read_alerts_jsonl(read_bytes(&a.alerts)?.as_slice())?;
    let r = summarise(&alerts);
    let mut buf = Vec::new();
    if a.json {
        to_json_line(&mut buf, &r)?;
    } else {
        use std::fmt::Write;
        let mut s = format!("alerts: {} (acked {})\n", r.total, r.acked);
        if !r.classes.is_empty() {
            let _ = writeln!(s, "{:<20} {:>6} {:>10} {:>10} {:>8}", "class", "count", "first_ts", "last_ts", "max_conf");
        }
        for (class, c) in &r.classes {
            let _ = writeln!(
                s,
                "{:<20} {:>6} {:>10.1} {:>10.1} {:>8.3}",
                class.as_str(),
                c.count,
                c.first_ts,
                c.last_ts,
                c.max_confidence
            );
        }
        buf = s.into_bytes();
    }
    emit(a.out.as_deref(), &buf)
}
