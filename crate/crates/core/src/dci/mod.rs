//! Data collection infrastructure: attack traces from honeypots and replay
//! feeds, merged, enriched from offline tables, clustered and stored in an
//! append-only log with exact queries.

mod cluster;
mod enrich;
mod filter;
mod store;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{BufRead, Write};
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{cluster_traces, trace_vector, Clustering, MAX_LLOYD_ITERATIONS};
pub use enrich::{enrich, fingerprint_os, EnrichmentTables, OsSignature, PrefixTable};
pub use filter::{Field, Filter, Op, Predicate, Value};
pub use store::{Annotation, Page, TraceStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DciError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("feed {0} is not time-ordered")]
    UnorderedFeed(String),
    #[error("malformed filter: {0}")]
    MalformedFilter(String),
    #[error("vector {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("k={k} is invalid for {n} vectors")]
    BadK { k: usize, n: usize },
    #[error("unknown trace id {0}")]
    UnknownTrace(u64),
    #[error("{file}:{line}: {msg}")]
    MalformedTable { file: String, line: usize, msg: String },
    #[error("malformed record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TraceSource {
    Honeynode(String),
    Replay(String),
}

impl fmt::Display for TraceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceSource::Honeynode(id) => write!(f, "honeynode:{id}"),
            TraceSource::Replay(name) => write!(f, "replay:{name}"),
        }
    }
}

impl FromStr for TraceSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("honeynode", id)) if !id.is_empty() => Ok(TraceSource::Honeynode(id.to_string())),
            Some(("replay", name)) if !name.is_empty() => Ok(TraceSource::Replay(name.to_string())),
            _ => Err(format!("bad trace source {s:?}, expected honeynode:<id> or replay:<name>")),
        }
    }
}

impl From<TraceSource> for String {
    fn from(s: TraceSource) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for TraceSource {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceEventKind {
    Connection,
    AppInstall,
    SmsSend,
    UrlVisit,
    SyscallBurst,
}

impl TraceEventKind {
    pub const ALL: [TraceEventKind; 5] = [
        TraceEventKind::Connection,
        TraceEventKind::AppInstall,
        TraceEventKind::SmsSend,
        TraceEventKind::UrlVisit,
        TraceEventKind::SyscallBurst,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceEventKind::Connection => "CONNECTION",
            TraceEventKind::AppInstall => "APP_INSTALL",
            TraceEventKind::SmsSend => "SMS_SEND",
            TraceEventKind::UrlVisit => "URL_VISIT",
            TraceEventKind::SyscallBurst => "SYSCALL_BURST",
        }
    }

    pub fn needs_remote(self) -> bool {
        matches!(self, TraceEventKind::Connection | TraceEventKind::UrlVisit)
    }
}

impl fmt::Display for TraceEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceEventKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraceEventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind {s:?}"))
    }
}

/// One line of `traces.jsonl` as produced by a feed, before an id is
/// assigned. `peer` carries the destination number of `SMS_SEND` events.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub ts_ms: u64,
    pub source: TraceSource,
    pub event_kind: TraceEventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<IpAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub win: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<String>,
}

const RECORD_FIELDS: [&str; 9] = ["ts_ms", "source", "event_kind", "ip", "port", "payload_hash", "ttl", "win", "peer"];

impl TraceRecord {
    pub fn validate(&self) -> Result<(), DciError> {
        let bad = |m: String| Err(DciError::SchemaViolation(m));
        if self.event_kind.needs_remote() && (self.ip.is_none() || self.port.is_none()) {
            return bad(format!("{} requires ip and port", self.event_kind));
        }
        if self.ip.is_some() != self.port.is_some() {
            return bad("ip and port must be given together".into());
        }
        if self.ttl.is_some() != self.win.is_some() {
            return bad("ttl and win must be given together".into());
        }
        if let Some(h) = &self.payload_hash {
            if h.is_empty() || !h.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
                return bad(format!("payload_hash {h:?} is not lowercase hex"));
            }
        }
        Ok(())
    }

    pub fn tcp_meta(&self) -> Option<(u8, u32)> {
        self.ttl.zip(self.win)
    }

    /// Parses one JSON line, rejecting unknown fields and schema violations.
    pub fn from_json(line: &str) -> Result<Self, DciError> {
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| DciError::SchemaViolation(e.to_string()))?;
        if let Some(obj) = value.as_object() {
            if let Some(k) = obj.keys().find(|k| !RECORD_FIELDS.contains(&k.as_str())) {
                return Err(DciError::SchemaViolation(format!("unknown field {k:?}")));
            }
        }
        let rec: TraceRecord = serde_json::from_value(value).map_err(|e| DciError::SchemaViolation(e.to_string()))?;
        rec.validate()?;
        Ok(rec)
    }
}

/// A stored trace: the ingested record plus its store-assigned id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub trace_id: u64,
    #[serde(flatten)]
    pub record: TraceRecord,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedTrace {
    pub base: AttackTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asn: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rdns: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub os_guess: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<u32>,
}

impl EnrichedTrace {
    pub fn bare(base: AttackTrace) -> Self {
        EnrichedTrace { base, geo: None, asn: None, rdns: None, os_guess: None, cluster_id: None }
    }
}

/// K-way merge of internally time-ordered feeds. Ties are broken by feed
/// name, then by position within the feed.
pub fn aggregate_sources(feeds: &[(String, Vec<TraceRecord>)]) -> Result<Vec<TraceRecord>, DciError> {
    for (name, records) in feeds {
        if records.windows(2).any(|w| w[1].ts_ms < w[0].ts_ms) {
            return Err(DciError::UnorderedFeed(name.clone()));
        }
    }
    let mut heap = BinaryHeap::new();
    for (f, (name, records)) in feeds.iter().enumerate() {
        if let Some(r) = records.first() {
            heap.push(Reverse((r.ts_ms, name.as_str(), f, 0usize)));
        }
    }
    let mut out = Vec::with_capacity(feeds.iter().map(|(_, r)| r.len()).sum());
    while let Some(Reverse((_, name, f, i))) = heap.pop() {
        let records = &feeds[f].1;
        out.push(records[i].clone());
        if let Some(r) = records.get(i + 1) {
            heap.push(Reverse((r.ts_ms, name, f, i + 1)));
        }
    }
    Ok(out)
}

pub fn read_traces_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, DciError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| DciError::StorageFailure(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(TraceRecord::from_json(&line).map_err(|e| DciError::MalformedRecord { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_traces_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<(), DciError> {
    let io = |e: std::io::Error| DciError::StorageFailure(e.to_string());
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DciError::StorageFailure(e.to_string()))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}
