//! Simulation runs driven through the API.

use std::collections::BTreeMap;

use nemesys_core::detect::{AttackClass, Detector, DetectorConfig};
use nemesys_core::features::{merge_records, FeatureVector};
use nemesys_core::netsim::{build_scenario, run, AttackConfig, ScenarioConfig, SignalingKind, TraceSet};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Idle,
    Running,
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub status: RunStatus,
    pub seed: u64,
    pub horizon_s: f64,
    pub ue_count: u32,
    pub attacks: Vec<AttackConfig>,
    /// Ids of the alerts this run raised, once done.
    pub alert_ids: Vec<u64>,
    pub alert_classes: BTreeMap<AttackClass, usize>,
    /// Set when the run failed after starting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationSummary {
    pub station_id: String,
    pub service_rate: f64,
    pub offered: u64,
    pub served: u64,
    pub mean_occupancy: f64,
    pub mean_sojourn: f64,
}

/// One detection window of the signaling-rate timeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub t: f64,
    pub total_msg_rate: f64,
    pub promote_rate: f64,
    pub active_ue_count: u64,
    pub premium_charge_rate: f64,
}

impl From<&FeatureVector> for RatePoint {
    fn from(f: &FeatureVector) -> Self {
        RatePoint {
            t: f.window_start + f.width,
            total_msg_rate: f.total_msg_rate,
            promote_rate: f.rate(SignalingKind::PromoteI2F),
            active_ue_count: f.active_ue_count,
            premium_charge_rate: f.premium_charge_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub run_id: String,
    pub horizon_s: f64,
    pub messages_offered: u64,
    pub total_cost: u64,
    pub signaling: BTreeMap<SignalingKind, u64>,
    pub cdr_count: u64,
    pub stations: Vec<StationSummary>,
    pub timeline: Vec<RatePoint>,
}

pub(crate) struct RunEntry {
    pub info: RunInfo,
    pub config: ScenarioConfig,
    pub stats: Option<NetworkStats>,
}

#[derive(Default)]
pub(crate) struct Runs {
    pub entries: BTreeMap<u64, RunEntry>,
    next: u64,
}

impl Runs {
    pub fn create(&mut self, config: ScenarioConfig) -> RunInfo {
        self.next += 1;
        let info = RunInfo {
            run_id: format!("r{}", self.next),
            status: RunStatus::Idle,
            seed: config.seed,
            horizon_s: config.horizon_s,
            ue_count: config.ue_groups.iter().map(|g| g.count).sum(),
            attacks: config.attacks.clone(),
            alert_ids: Vec::new(),
            alert_classes: BTreeMap::new(),
            error: None,
        };
        self.entries.insert(self.next, RunEntry { info: info.clone(), config, stats: None });
        info
    }

    pub fn get_mut(&mut self, run_id: &str) -> Option<&mut RunEntry> {
        let n: u64 = run_id.strip_prefix('r')?.parse().ok()?;
        self.entries.get_mut(&n)
    }

    pub fn latest_done(&self) -> Option<&RunEntry> {
        self.entries.values().rev().find(|e| e.info.status == RunStatus::Done && e.stats.is_some())
    }
}

pub(crate) struct Outcome {
    pub stats: NetworkStats,
    pub alerts: Vec<nemesys_core::detect::Alert>,
}

/// Simulates `config` and runs the detector over the result.
pub(crate) fn execute(run_id: &str, config: &ScenarioConfig, detector: &DetectorConfig) -> Result<Outcome, nemesys_core::Error> {
    let scenario = build_scenario(config)?;
    let trace = run(&scenario)?;
    let records = merge_records(&trace.signaling, &trace.cdrs);
    let detection = Detector::new(detector.clone(), None, None)?.run(&records, config.horizon_s)?;
    Ok(Outcome { stats: stats(run_id, &trace, &detection.features), alerts: detection.alerts })
}

fn stats(run_id: &str, trace: &TraceSet, features: &[FeatureVector]) -> NetworkStats {
    let mut signaling = BTreeMap::new();
    for e in &trace.signaling {
        *signaling.entry(e.kind).or_insert(0) += 1;
    }
    NetworkStats {
        run_id: run_id.to_string(),
        horizon_s: trace.horizon,
        messages_offered: trace.messages_offered,
        total_cost: trace.total_cost(),
        signaling,
        cdr_count: trace.cdrs.len() as u64,
        stations: trace
            .station_stats
            .iter()
            .map(|s| StationSummary {
                station_id: s.station_id.clone(),
                service_rate: s.service_rate,
                offered: s.offered,
                served: s.served,
                mean_occupancy: s.mean_occupancy,
                mean_sojourn: s.mean_sojourn,
            })
            .collect(),
        timeline: features.iter().map(RatePoint::from).collect(),
    }
}
