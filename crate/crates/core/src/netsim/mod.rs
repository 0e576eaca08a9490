//! Discrete-event simulation of the mobile control plane and billing stream.
//!
//! A run proceeds per UE: each UE owns a random stream, turns its traffic
//! profile (plus any scheduled attack stimuli) into a sorted stimulus list,
//! and drives the pure [`rrc_step`] function through it. The resulting
//! signaling events are merged network-wide and offered, message by message,
//! to an open network of FIFO stations with exponential service.

mod cdr;
mod config;
mod export;
mod profile;
mod rrc;
mod sim;
mod station;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cdr::{anonymize, ChargeUnits, ChargingDataRecord, CdrEmitter, Service, SessionRecord, TariffTable};
pub use config::{
    build_scenario, AttackConfig, RoutingConfig, Scenario, ScenarioConfig, StationSpec, UeGroupConfig,
};
pub use export::{read_cdr_csv, read_events_jsonl, write_cdr_csv, write_events_jsonl, EventLine};
pub use profile::{synth_profile, Dist, ProfileKind, TrafficProfile};
pub use rrc::{rrc_step, RrcParams, RrcState, Stimulus, UeState};
pub use sim::{run, OccupancySample, StationStats, TraceSet};
pub use station::{station_advance, Completion, Message, QueueStation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("malformed config: {0}")]
    MalformedConfig(String),
    #[error("event kind {0} is not routed to any station")]
    UnroutedEventKind(SignalingKind),
    #[error("unknown profile kind {0:?}")]
    UnknownProfileKind(String),
    #[error("arrivals not monotone at index {index} (t={ts}, station clock {clock})")]
    NonMonotoneArrivals { index: usize, ts: f64, clock: f64 },
    #[error("arrival at t={ts} lies beyond the advance horizon {until}")]
    ArrivalBeyondUntil { ts: f64, until: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

/// Opaque UE identifier, rendered as `u0042`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct UeId(pub u32);

impl fmt::Display for UeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{:04}", self.0)
    }
}

impl FromStr for UeId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('u')
            .and_then(|d| d.parse().ok())
            .map(UeId)
            .ok_or_else(|| format!("bad ue id {s:?}"))
    }
}

impl From<UeId> for String {
    fn from(id: UeId) -> String {
        id.to_string()
    }
}

impl TryFrom<String> for UeId {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Opaque cell identifier, rendered as `c3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CellId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl FromStr for CellId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('c')
            .and_then(|d| d.parse().ok())
            .map(CellId)
            .ok_or_else(|| format!("bad cell id {s:?}"))
    }
}

impl From<CellId> for String {
    fn from(id: CellId) -> String {
        id.to_string()
    }
}

impl TryFrom<String> for CellId {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SignalingKind {
    Attach,
    Detach,
    #[serde(rename = "PROMOTE_I2F")]
    PromoteI2F,
    #[serde(rename = "PROMOTE_F2D")]
    PromoteF2D,
    #[serde(rename = "DEMOTE_D2F")]
    DemoteD2F,
    #[serde(rename = "DEMOTE_F2I")]
    DemoteF2I,
    Paging,
}

impl SignalingKind {
    pub const ALL: [SignalingKind; 7] = [
        SignalingKind::Attach,
        SignalingKind::Detach,
        SignalingKind::PromoteI2F,
        SignalingKind::PromoteF2D,
        SignalingKind::DemoteD2F,
        SignalingKind::DemoteF2I,
        SignalingKind::Paging,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalingKind::Attach => "ATTACH",
            SignalingKind::Detach => "DETACH",
            SignalingKind::PromoteI2F => "PROMOTE_I2F",
            SignalingKind::PromoteF2D => "PROMOTE_F2D",
            SignalingKind::DemoteD2F => "DEMOTE_D2F",
            SignalingKind::DemoteF2I => "DEMOTE_F2I",
            SignalingKind::Paging => "PAGING",
        }
    }

    pub fn is_promotion(self) -> bool {
        matches!(self, SignalingKind::PromoteI2F | SignalingKind::PromoteF2D)
    }

    pub fn is_demotion(self) -> bool {
        matches!(self, SignalingKind::DemoteD2F | SignalingKind::DemoteF2I)
    }
}

impl fmt::Display for SignalingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalingKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SignalingKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown signaling kind {s:?}"))
    }
}

/// One control-plane message burst.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalingEvent {
    /// Simulated seconds since the start of the run.
    pub ts: f64,
    pub ue_id: UeId,
    pub kind: SignalingKind,
    pub cell_id: CellId,
    /// Number of control-plane messages the burst puts on the core.
    pub cost: u32,
}
