//! Logical model of a virtualised mobile honeypot.
//!
//! An infrastructure domain sits in front of the honeypot domain: every
//! outgoing event passes through [`HoneyNode::mediate`], is written to the
//! wiretap log and is then forwarded or blocked by the [`MediationPolicy`].
//! Malware is spotted by exact payload signatures and by weighted behaviour
//! rules. Snapshots roll the node back after an infection.

mod rules;
mod script;

use std::collections::BTreeSet;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dci::{TraceEventKind, TraceRecord, TraceSource};

pub use rules::{behaviour_score, Predicate, Rule, RuleSet, WEIGHT_TOLERANCE};
pub use script::{benign_activity, infection_script, payload_hash, InfectionProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HoneyError {
    #[error("snapshot of node {snapshot} cannot restore node {node}")]
    NodeMismatch { node: String, snapshot: String },
    #[error("rule weights must be non-negative and sum to 1, got sum {0}")]
    BadWeights(f64),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("{file}:{line}: {msg}")]
    MalformedTable { file: String, line: usize, msg: String },
    #[error("malformed record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("i/o: {0}")]
    Io(String),
}

/// Activity leaving the honeypot domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoneypotEvent {
    pub ts_ms: u64,
    pub event_kind: TraceEventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<std::net::IpAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub win: Option<u32>,
    /// Destination number of an `SMS_SEND`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<String>,
}

impl HoneypotEvent {
    pub fn new(ts_ms: u64, event_kind: TraceEventKind) -> Self {
        HoneypotEvent { ts_ms, event_kind, ip: None, port: None, payload_hash: None, ttl: None, win: None, peer: None }
    }

    pub fn sms(ts_ms: u64, peer: &str) -> Self {
        HoneypotEvent { peer: Some(peer.to_string()), ..Self::new(ts_ms, TraceEventKind::SmsSend) }
    }

    pub fn connection(ts_ms: u64, ip: std::net::IpAddr, port: u16) -> Self {
        HoneypotEvent { ip: Some(ip), port: Some(port), ..Self::new(ts_ms, TraceEventKind::Connection) }
    }

    /// The trace record this event becomes when forwarded by `node_id`.
    pub fn to_trace(&self, node_id: &str) -> TraceRecord {
        TraceRecord {
            ts_ms: self.ts_ms,
            source: TraceSource::Honeynode(node_id.to_string()),
            event_kind: self.event_kind,
            ip: self.ip,
            port: self.port,
            payload_hash: self.payload_hash.clone(),
            ttl: self.ttl,
            win: self.win,
            peer: self.peer.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), HoneyError> {
        if self.event_kind == TraceEventKind::SmsSend && self.peer.as_deref().is_none_or(str::is_empty) {
            return Err(HoneyError::InvalidEvent("SMS_SEND requires a peer number".into()));
        }
        self.to_trace("check").validate().map_err(|e| HoneyError::InvalidEvent(e.to_string()))
    }

    pub fn is_premium(&self, prefixes: &[String]) -> bool {
        self.event_kind == TraceEventKind::SmsSend
            && self.peer.as_deref().is_some_and(|p| prefixes.iter().any(|pre| p.starts_with(pre.as_str())))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediationPolicy {
    #[serde(default)]
    pub block_premium: bool,
    #[serde(default)]
    pub premium_prefixes: Vec<String>,
    #[serde(default)]
    pub blocked_kinds: BTreeSet<TraceEventKind>,
}

impl Default for MediationPolicy {
    fn default() -> Self {
        MediationPolicy { block_premium: true, premium_prefixes: vec!["900".into()], blocked_kinds: BTreeSet::new() }
    }
}

impl MediationPolicy {
    pub fn validate(&self) -> Result<(), HoneyError> {
        if self.block_premium && self.premium_prefixes.is_empty() {
            return Err(HoneyError::InvalidPolicy("block_premium needs at least one premium prefix".into()));
        }
        if self.premium_prefixes.iter().any(String::is_empty) {
            return Err(HoneyError::InvalidPolicy("empty premium prefix".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HoneyError> {
        let p: MediationPolicy = toml::from_str(s).map_err(|e| HoneyError::InvalidPolicy(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn decide(&self, event: &HoneypotEvent) -> Decision {
        if self.blocked_kinds.contains(&event.event_kind) || (self.block_premium && event.is_premium(&self.premium_prefixes)) {
            Decision::Block
        } else {
            Decision::Forward
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Forward,
    Block,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InfectionState {
    #[default]
    Clean,
    Suspect,
    Infected,
}

/// A wiretap entry: the event as seen plus the mediation outcome.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    pub event: HoneypotEvent,
    pub decision: Decision,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AuditAction {
    Restore { snapshot_version: u64, discarded_events: usize },
    Escalate { from: InfectionState, to: InfectionState, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// Node version after the audited change.
    pub state_version: u64,
    #[serde(flatten)]
    pub action: AuditAction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfectionThresholds {
    pub suspect: f64,
    pub infected: f64,
}

impl Default for InfectionThresholds {
    fn default() -> Self {
        InfectionThresholds { suspect: 0.5, infected: 0.8 }
    }
}

impl InfectionThresholds {
    pub fn state_for(&self, score: f64) -> InfectionState {
        if score >= self.infected {
            InfectionState::Infected
        } else if score >= self.suspect {
            InfectionState::Suspect
        } else {
            InfectionState::Clean
        }
    }
}

/// Frozen node state. Fields are private so a snapshot cannot be edited
/// after it is taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    node_id: String,
    state_version: u64,
    policy: MediationPolicy,
    event_log: Vec<LoggedEvent>,
    infection_state: InfectionState,
}

impl Snapshot {
    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn state_version(&self) -> u64 {
        self.state_version
    }

    pub fn event_log(&self) -> &[LoggedEvent] {
        &self.event_log
    }

    pub fn infection_state(&self) -> InfectionState {
        self.infection_state
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoneyNode {
    node_id: String,
    policy: MediationPolicy,
    thresholds: InfectionThresholds,
    event_log: Vec<LoggedEvent>,
    state_version: u64,
    infection_state: InfectionState,
    audit: Vec<AuditRecord>,
}

impl HoneyNode {
    pub fn new(node_id: impl Into<String>, policy: MediationPolicy) -> Result<Self, HoneyError> {
        policy.validate()?;
        Ok(HoneyNode {
            node_id: node_id.into(),
            policy,
            thresholds: InfectionThresholds::default(),
            event_log: Vec::new(),
            state_version: 0,
            infection_state: InfectionState::Clean,
            audit: Vec::new(),
        })
    }

    pub fn with_thresholds(mut self, thresholds: InfectionThresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn policy(&self) -> &MediationPolicy {
        &self.policy
    }

    pub fn event_log(&self) -> &[LoggedEvent] {
        &self.event_log
    }

    pub fn state_version(&self) -> u64 {
        self.state_version
    }

    pub fn infection_state(&self) -> InfectionState {
        self.infection_state
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Logs `event` and decides whether it leaves the honeypot.
    pub fn mediate(&mut self, event: HoneypotEvent) -> Decision {
        let decision = self.policy.decide(&event);
        self.event_log.push(LoggedEvent { seq: self.event_log.len() as u64 + 1, event, decision });
        self.state_version += 1;
        decision
    }

    /// Forwarded events, in log order.
    pub fn forwarded(&self) -> impl Iterator<Item = &HoneypotEvent> {
        self.event_log.iter().filter(|e| e.decision == Decision::Forward).map(|e| &e.event)
    }

    /// Forwarded events as trace records sourced from this node.
    pub fn forwarded_traces(&self) -> Vec<TraceRecord> {
        self.forwarded().map(|e| e.to_trace(&self.node_id)).collect()
    }

    fn escalate(&mut self, to: InfectionState, reason: String) -> bool {
        if to <= self.infection_state {
            return false;
        }
        self.state_version += 1;
        self.audit.push(AuditRecord {
            state_version: self.state_version,
            action: AuditAction::Escalate { from: self.infection_state, to, reason },
        });
        self.infection_state = to;
        true
    }

    /// Scores the last `window` logged events and raises the infection state
    /// when a threshold is crossed. The state never drops here; only
    /// [`restore`](Self::restore) cleans a node.
    pub fn assess(&mut self, window: usize, rules: &RuleSet) -> Result<f64, HoneyError> {
        let start = self.event_log.len().saturating_sub(window);
        let events: Vec<HoneypotEvent> = self.event_log[start..].iter().map(|e| e.event.clone()).collect();
        let score = behaviour_score(&events, rules)?;
        self.escalate(self.thresholds.state_for(score), format!("behaviour score {score:.3}"));
        Ok(score)
    }

    /// Checks the newest logged event against `db`; a hit marks the node
    /// infected.
    pub fn scan_latest(&mut self, db: &SignatureDb) -> Option<String> {
        let sig = self.event_log.last().and_then(|e| db.match_signature(&e.event))?.to_string();
        self.escalate(InfectionState::Infected, format!("signature {sig}"));
        Some(sig)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            node_id: self.node_id.clone(),
            state_version: self.state_version,
            policy: self.policy.clone(),
            event_log: self.event_log.clone(),
            infection_state: self.infection_state,
        }
    }

    /// Rolls back to `snap`. The version counter still advances and the
    /// rollback is recorded in the audit trail.
    pub fn restore(&mut self, snap: &Snapshot) -> Result<(), HoneyError> {
        if snap.node_id != self.node_id {
            return Err(HoneyError::NodeMismatch { node: self.node_id.clone(), snapshot: snap.node_id.clone() });
        }
        let discarded = self.event_log.len().saturating_sub(snap.event_log.len());
        self.policy = snap.policy.clone();
        self.event_log = snap.event_log.clone();
        self.infection_state = snap.infection_state;
        self.state_version += 1;
        self.audit.push(AuditRecord {
            state_version: self.state_version,
            action: AuditAction::Restore { snapshot_version: snap.state_version, discarded_events: discarded },
        });
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureDb {
    entries: Vec<(String, String)>,
}

impl SignatureDb {
    pub fn new(entries: Vec<(String, String)>) -> Result<Self, HoneyError> {
        let mut seen = BTreeSet::new();
        for (i, (id, _)) in entries.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(HoneyError::MalformedTable {
                    file: "signatures".into(),
                    line: i + 2,
                    msg: format!("duplicate sig_id {id:?}"),
                });
            }
        }
        Ok(SignatureDb { entries })
    }

    /// Reads `sig_id,payload_hash` CSV with a header row.
    pub fn from_csv(input: impl Read) -> Result<Self, HoneyError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let bad = |line: usize, msg: String| HoneyError::MalformedTable { file: "signatures".into(), line, msg };
        let header = reader.headers().map_err(|e| bad(1, e.to_string()))?;
        if !header.iter().eq(["sig_id", "payload_hash"]) {
            return Err(bad(1, "header must be sig_id,payload_hash".into()));
        }
        let mut entries = Vec::new();
        for (i, row) in reader.deserialize::<(String, String)>().enumerate() {
            entries.push(row.map_err(|e| bad(i + 2, e.to_string()))?);
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First entry, in table order, whose hash equals the event's payload hash.
    pub fn match_signature(&self, event: &HoneypotEvent) -> Option<&str> {
        let hash = event.payload_hash.as_deref()?;
        self.entries.iter().find(|(_, h)| h == hash).map(|(id, _)| id.as_str())
    }
}

pub fn read_events_jsonl<R: BufRead>(input: R) -> Result<Vec<HoneypotEvent>, HoneyError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| HoneyError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| HoneyError::MalformedRecord { line: i + 1, msg };
        let event: HoneypotEvent = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        event.validate().map_err(|e| bad(e.to_string()))?;
        out.push(event);
    }
    Ok(out)
}

pub fn write_events_jsonl<W: Write>(mut out: W, events: &[HoneypotEvent]) -> Result<(), HoneyError> {
    let io = |e: std::io::Error| HoneyError::Io(e.to_string());
    for e in events {
        let line = serde_json::to_string(e).map_err(|e| HoneyError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}
