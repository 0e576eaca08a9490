use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::{CellId, ChargeUnits, ChargingDataRecord, Service, SignalingEvent, SignalingKind, SimError, UeId};

/// One line of `events.jsonl`. Field order is part of the format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLine {
    pub ts_ms: u64,
    pub ue: UeId,
    pub kind: SignalingKind,
    pub cell: CellId,
    pub cost: u32,
}

impl From<&SignalingEvent> for EventLine {
    fn from(e: &SignalingEvent) -> Self {
        EventLine { ts_ms: to_ms(e.ts), ue: e.ue_id, kind: e.kind, cell: e.cell_id, cost: e.cost }
    }
}

impl From<EventLine> for SignalingEvent {
    fn from(l: EventLine) -> Self {
        SignalingEvent { ts: l.ts_ms as f64 / 1000.0, ue_id: l.ue, kind: l.kind, cell_id: l.cell, cost: l.cost }
    }
}

fn to_ms(ts: f64) -> u64 {
    (ts * 1000.0).round().max(0.0) as u64
}

pub fn write_events_jsonl<W: Write>(mut out: W, events: &[SignalingEvent]) -> Result<(), SimError> {
    for e in events {
        let line = serde_json::to_string(&EventLine::from(e)).map_err(|e| SimError::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `events.jsonl`; blank lines are skipped, line numbers are 1-based.
pub fn read_events_jsonl<R: BufRead>(input: R) -> Result<Vec<SignalingEvent>, SimError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EventLine = serde_json::from_str(&line)
            .map_err(|e| SimError::MalformedRecord { line: i + 1, msg: e.to_string() })?;
        if parsed.cost == 0 {
            return Err(SimError::MalformedRecord { line: i + 1, msg: "cost must be >= 1".into() });
        }
        events.push(parsed.into());
    }
    Ok(events)
}

#[derive(Debug, Serialize, Deserialize)]
struct CdrRow {
    record_id: u64,
    ue_id: String,
    service: Service,
    start_ts_ms: u64,
    duration_s: String,
    bytes_up: u64,
    bytes_down: u64,
    peer: String,
    charge_units: String,
    cell_id: CellId,
}

pub fn write_cdr_csv<W: Write>(out: W, cdrs: &[ChargingDataRecord]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SimError::Io(e.to_string());
    if cdrs.is_empty() {
        w.write_record([
            "record_id",
            "ue_id",
            "service",
            "start_ts_ms",
            "duration_s",
            "bytes_up",
            "bytes_down",
            "peer",
            "charge_units",
            "cell_id",
        ])
        .map_err(io)?;
    }
    for c in cdrs {
        w.serialize(CdrRow {
            record_id: c.record_id,
            ue_id: c.ue_id.clone(),
            service: c.service,
            start_ts_ms: to_ms(c.start_ts),
            duration_s: format!("{:.3}", c.duration),
            bytes_up: c.bytes_up,
            bytes_down: c.bytes_down,
            peer: c.peer.clone(),
            charge_units: c.charge_units.to_string(),
            cell_id: c.cell_id,
        })
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `cdr.csv`; line numbers count the header as line 1.
pub fn read_cdr_csv<R: Read>(input: R) -> Result<Vec<ChargingDataRecord>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<CdrRow>().enumerate() {
        let line = i + 2;
        let bad = |msg: String| SimError::MalformedRecord { line, msg };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let duration: f64 = row.duration_s.parse().map_err(|_| bad(format!("bad duration {:?}", row.duration_s)))?;
        if !(duration >= 0.0) {
            return Err(bad("duration must be >= 0".into()));
        }
        let charge_units: ChargeUnits = row.charge_units.parse().map_err(bad)?;
        out.push(ChargingDataRecord {
            record_id: row.record_id,
            ue_id: row.ue_id,
            service: row.service,
            start_ts: row.start_ts_ms as f64 / 1000.0,
            duration,
            bytes_up: row.bytes_up,
            bytes_down: row.bytes_down,
            peer: row.peer,
            charge_units,
            cell_id: row.cell_id,
        });
    }
    Ok(out)
}
