//! Windowing and per-window statistics of signaling and billing streams.
//!
//! Windows start at integer multiples of the stride. Inter-event statistics
//! and autocorrelation use the signaling events of a window; CDRs contribute
//! the billing fields (`premium_charge_rate`, `data_volume_rate`). CDRs carry
//! an anonymised subscriber id, so they are attributed to network and cell
//! scopes only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{CellId, ChargingDataRecord, Service, SignalingEvent, SignalingKind, UeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("stream not time-ordered at index {index}")]
    UnorderedStream { index: usize },
    #[error("need at least {needed} timestamps, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("series of length {len} too short for lag {lag}")]
    SeriesTooShort { len: usize, lag: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("malformed feature record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FeatureError {
    fn from(e: std::io::Error) -> Self {
        FeatureError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Scope {
    Network,
    Cell(CellId),
    Ue(UeId),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Network => f.write_str("network"),
            Scope::Cell(c) => write!(f, "cell:{c}"),
            Scope::Ue(u) => write!(f, "ue:{u}"),
        }
    }
}

impl FromStr for Scope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "network" => Ok(Scope::Network),
            Some(("cell", c)) => c.parse().map(Scope::Cell),
            Some(("ue", u)) => u.parse().map(Scope::Ue),
            _ => Err(format!("bad scope {s:?}")),
        }
    }
}

impl From<Scope> for String {
    fn from(s: Scope) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Scope {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// A signaling event or a CDR, ordered by the time it became observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Signaling(SignalingEvent),
    Cdr(ChargingDataRecord),
}

impl Record {
    pub fn ts(&self) -> f64 {
        match self {
            Record::Signaling(e) => e.ts,
            Record::Cdr(c) => c.emitted_at(),
        }
    }

    pub fn in_scope(&self, scope: Scope) -> bool {
        match (scope, self) {
            (Scope::Network, _) => true,
            (Scope::Cell(c), Record::Signaling(e)) => e.cell_id == c,
            (Scope::Cell(c), Record::Cdr(r)) => r.cell_id == c,
            (Scope::Ue(u), Record::Signaling(e)) => e.ue_id == u,
            (Scope::Ue(_), Record::Cdr(_)) => false,
        }
    }
}

/// Merges signaling events and CDRs into one stream ordered by observation
/// time. Both inputs must already be ordered; ties put signaling first.
pub fn merge_records(signaling: &[SignalingEvent], cdrs: &[ChargingDataRecord]) -> Vec<Record> {
    let mut cdrs_sorted: Vec<&ChargingDataRecord> = cdrs.iter().collect();
    cdrs_sorted.sort_by(|a, b| a.emitted_at().total_cmp(&b.emitted_at()));
    let mut out = Vec::with_capacity(signaling.len() + cdrs.len());
    let (mut i, mut j) = (0, 0);
    while i < signaling.len() || j < cdrs_sorted.len() {
        let take_sig = match (signaling.get(i), cdrs_sorted.get(j)) {
            (Some(e), Some(c)) => e.ts <= c.emitted_at(),
            (Some(_), None) => true,
            _ => false,
        };
        if take_sig {
            out.push(Record::Signaling(signaling[i].clone()));
            i += 1;
        } else {
            out.push(Record::Cdr(cdrs_sorted[j].clone()));
            j += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub width: f64,
    pub scope: Scope,
    pub events: Vec<Record>,
}

impl Window {
    pub fn end(&self) -> f64 {
        self.start + self.width
    }

    pub fn signaling(&self) -> impl Iterator<Item = &SignalingEvent> {
        self.events.iter().filter_map(|r| match r {
            Record::Signaling(e) => Some(e),
            Record::Cdr(_) => None,
        })
    }

    pub fn cdrs(&self) -> impl Iterator<Item = &ChargingDataRecord> {
        self.events.iter().filter_map(|r| match r {
            Record::Cdr(c) => Some(c),
            Record::Signaling(_) => None,
        })
    }
}

fn check_geometry(width: f64, stride: f64) -> Result<(), FeatureError> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(FeatureError::InvalidWindow(format!("width must be > 0, got {width}")));
    }
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(FeatureError::InvalidWindow(format!("stride must be > 0, got {stride}")));
    }
    Ok(())
}

fn check_order(stream: &[Record]) -> Result<(), FeatureError> {
    match stream.windows(2).position(|w| w[1].ts() < w[0].ts()) {
        Some(i) => Err(FeatureError::UnorderedStream { index: i + 1 }),
        None => Ok(()),
    }
}

/// Windows `[k·stride, k·stride + width)` covering every in-scope event, from
/// the first window containing an event to the last.
pub fn windowize(stream: &[Record], width: f64, stride: f64, scope: Scope) -> Result<Vec<Window>, FeatureError> {
    check_geometry(width, stride)?;
    check_order(stream)?;
    let events: Vec<&Record> = stream.iter().filter(|r| r.in_scope(scope)).collect();
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Ok(Vec::new());
    };
    let k_min = (((first.ts() - width) / stride).floor() + 1.0).max(0.0) as u64;
    let k_max = (last.ts() / stride).floor().max(0.0) as u64;
    Ok(build_windows(&events, width, stride, scope, k_min..k_max + 1))
}

/// Every window whose start lies in `span`, including empty ones.
pub fn windowize_span(
    stream: &[Record],
    width: f64,
    stride: f64,
    scope: Scope,
    span: Range<f64>,
) -> Result<Vec<Window>, FeatureError> {
    check_geometry(width, stride)?;
    check_order(stream)?;
    if !(span.start >= 0.0 && span.end.is_finite()) {
        return Err(FeatureError::InvalidWindow(format!("bad span {span:?}")));
    }
    let events: Vec<&Record> = stream.iter().filter(|r| r.in_scope(scope)).collect();
    let k_min = (span.start / stride).ceil() as u64;
    let k_end = (span.end / stride).ceil() as u64;
    Ok(build_windows(&events, width, stride, scope, k_min..k_end))
}

/// The in-scope events of an ordered stream falling in `[start, start + width)`.
pub fn window_at(stream: &[Record], start: f64, width: f64, scope: Scope) -> Window {
    let lo = stream.partition_point(|r| r.ts() < start);
    let hi = lo + stream[lo..].partition_point(|r| r.ts() < start + width);
    let events = stream[lo..hi].iter().filter(|r| r.in_scope(scope)).cloned().collect();
    Window { start, width, scope, events }
}

fn build_windows(events: &[&Record], width: f64, stride: f64, scope: Scope, ks: Range<u64>) -> Vec<Window> {
    let mut out = Vec::with_capacity((ks.end - ks.start) as usize);
    let mut lo = 0;
    for k in ks {
        let start = k as f64 * stride;
        let end = start + width;
        lo += events[lo..].partition_point(|r| r.ts() < start);
        let hi = lo + events[lo..].partition_point(|r| r.ts() < end);
        out.push(Window { start, width, scope, events: events[lo..hi].iter().map(|r| (*r).clone()).collect() });
    }
    out
}

/// Mean, population variance and coefficient of variation of successive
/// differences. `cv` is 0 when all differences are 0.
pub fn inter_event_stats(times: &[f64]) -> Result<(f64, f64, f64), FeatureError> {
    if times.len() < 3 {
        return Err(FeatureError::InsufficientData { needed: 3, got: times.len() });
    }
    let n = (times.len() - 1) as f64;
    let diffs = times.windows(2).map(|w| w[1] - w[0]);
    let mean = diffs.clone().sum::<f64>() / n;
    let var = diffs.map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    Ok((mean, var, cv))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autocorr {
    pub value: f64,
    /// Set when either lagged segment is constant; `value` is then 0.
    pub zero_variance: bool,
}

/// Autocorrelation at `lag`, computed as the Pearson correlation of
/// `series[..n-lag]` with `series[lag..]`, so it always lies in `[-1, 1]`.
pub fn autocorr(series: &[f64], lag: usize) -> Result<Autocorr, FeatureError> {
    if lag == 0 || series.len() <= lag {
        return Err(FeatureError::SeriesTooShort { len: series.len(), lag });
    }
    let a = &series[..series.len() - lag];
    let b = &series[lag..];
    let m = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / m, b.iter().sum::<f64>() / m);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return Ok(Autocorr { value: 0.0, zero_variance: true });
    }
    let value = (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0);
    Ok(Autocorr { value, zero_variance: false })
}

/// Per-window statistics. `None` marks a field with insufficient data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub window_start: f64,
    pub width: f64,
    pub scope: Scope,
    pub event_count: u64,
    pub cdr_count: u64,
    /// Events per second for every signaling kind.
    pub rate_by_kind: BTreeMap<SignalingKind, f64>,
    /// Control-plane messages (event costs) per second.
    pub total_msg_rate: f64,
    pub iet_mean: Option<f64>,
    pub iet_var: Option<f64>,
    pub iet_cv: Option<f64>,
    pub lag1_autocorr: Option<f64>,
    pub autocorr_zero_variance: bool,
    /// Promotions over demotions; absent without demotions.
    pub promote_demote_ratio: Option<f64>,
    pub active_ue_count: u64,
    pub max_per_ue_rate: f64,
    pub premium_charge_rate: f64,
    /// Billed data bytes per second.
    pub data_volume_rate: f64,
}

/// Names accepted by [`FeatureVector::get`].
pub const FEATURE_NAMES: [&str; 16] = [
    "total_msg_rate",
    "rate.ATTACH",
    "rate.DETACH",
    "rate.PROMOTE_I2F",
    "rate.PROMOTE_F2D",
    "rate.DEMOTE_D2F",
    "rate.DEMOTE_F2I",
    "rate.PAGING",
    "iet_mean",
    "iet_cv",
    "lag1_autocorr",
    "promote_demote_ratio",
    "active_ue_count",
    "max_per_ue_rate",
    "premium_charge_rate",
    "data_volume_rate",
];

impl FeatureVector {
    /// Features of a window without events.
    pub fn empty(window_start: f64, width: f64, scope: Scope) -> Self {
        FeatureVector {
            window_start,
            width,
            scope,
            event_count: 0,
            cdr_count: 0,
            rate_by_kind: SignalingKind::ALL.iter().map(|&k| (k, 0.0)).collect(),
            total_msg_rate: 0.0,
            iet_mean: None,
            iet_var: None,
            iet_cv: None,
            lag1_autocorr: None,
            autocorr_zero_variance: false,
            promote_demote_ratio: None,
            active_ue_count: 0,
            max_per_ue_rate: 0.0,
            premium_charge_rate: 0.0,
            data_volume_rate: 0.0,
        }
    }

    pub fn rate(&self, kind: SignalingKind) -> f64 {
        self.rate_by_kind.get(&kind).copied().unwrap_or(0.0)
    }

    /// Looks up a feature by name; flagged fields read as `Some(0.0)`.
    pub fn get(&self, name: &str) -> Option<f64> {
        if let Some(kind) = name.strip_prefix("rate.") {
            return kind.parse().ok().map(|k| self.rate(k));
        }
        Some(match name {
            "total_msg_rate" => self.total_msg_rate,
            "iet_mean" => self.iet_mean.unwrap_or(0.0),
            "iet_var" => self.iet_var.unwrap_or(0.0),
            "iet_cv" => self.iet_cv.unwrap_or(0.0),
            "lag1_autocorr" => self.lag1_autocorr.unwrap_or(0.0),
            "promote_demote_ratio" => self.promote_demote_ratio.unwrap_or(0.0),
            "active_ue_count" => self.active_ue_count as f64,
            "max_per_ue_rate" => self.max_per_ue_rate,
            "premium_charge_rate" => self.premium_charge_rate,
            "data_volume_rate" => self.data_volume_rate,
            "event_count" => self.event_count as f64,
            _ => return None,
        })
    }

    /// Share of promotions that reached DCH.
    pub fn dch_fraction(&self) -> f64 {
        let i2f = self.rate(SignalingKind::PromoteI2F);
        if i2f > 0.0 {
            self.rate(SignalingKind::PromoteF2D) / i2f
        } else {
            0.0
        }
    }
}

pub fn extract_features(window: &Window) -> FeatureVector {
    let width = window.width;
    let mut counts: BTreeMap<SignalingKind, u64> = SignalingKind::ALL.iter().map(|&k| (k, 0)).collect();
    let mut per_ue: BTreeMap<UeId, u64> = BTreeMap::new();
    let mut cost = 0u64;
    let mut times = Vec::new();
    for e in window.signaling() {
        *counts.entry(e.kind).or_default() += 1;
        *per_ue.entry(e.ue_id).or_default() += 1;
        cost += e.cost as u64;
        times.push(e.ts);
    }
    let mut premium_milli = 0u64;
    let mut data_bytes = 0u64;
    let mut cdr_count = 0;
    for c in window.cdrs() {
        cdr_count += 1;
        match c.service {
            Service::PremiumSms => premium_milli += c.charge_units.milli(),
            Service::Data => data_bytes += c.bytes_up + c.bytes_down,
            _ => {}
        }
    }

    let (iet_mean, iet_var, iet_cv) = match inter_event_stats(&times) {
        Ok((m, v, cv)) => (Some(m), Some(v), Some(cv)),
        Err(_) => (None, None, None),
    };

    let (lag1_autocorr, autocorr_zero_variance) = if times.len() >= 3 {
        let bins = (width.ceil() as usize).max(1);
        let mut series = vec![0.0; bins];
        for t in &times {
            let b = ((t - window.start).floor() as usize).min(bins - 1);
            series[b] += 1.0;
        }
        match autocorr(&series, 1) {
            Ok(a) => (Some(a.value), a.zero_variance),
            Err(_) => (None, false),
        }
    } else {
        (None, false)
    };

    let promotions = counts[&SignalingKind::PromoteI2F] + counts[&SignalingKind::PromoteF2D];
    let demotions = counts[&SignalingKind::DemoteD2F] + counts[&SignalingKind::DemoteF2I];
    let promote_demote_ratio = (demotions > 0).then(|| promotions as f64 / demotions as f64);

    FeatureVector {
        window_start: window.start,
        width,
        scope: window.scope,
        event_count: times.len() as u64,
        cdr_count,
        rate_by_kind: counts.into_iter().map(|(k, n)| (k, n as f64 / width)).collect(),
        total_msg_rate: cost as f64 / width,
        iet_mean,
        iet_var,
        iet_cv,
        lag1_autocorr,
        autocorr_zero_variance,
        promote_demote_ratio,
        active_ue_count: per_ue.len() as u64,
        max_per_ue_rate: per_ue.values().copied().max().unwrap_or(0) as f64 / width,
        premium_charge_rate: premium_milli as f64 / 1000.0 / width,
        data_volume_rate: data_bytes as f64 / width,
    }
}

/// UEs with at least one event of `kind` in the window.
pub fn ues_with(window: &Window, kind: SignalingKind) -> BTreeSet<UeId> {
    window.signaling().filter(|e| e.kind == kind).map(|e| e.ue_id).collect()
}

pub fn write_features_jsonl<W: Write>(mut out: W, features: &[FeatureVector]) -> Result<(), FeatureError> {
    for f in features {
        let line = serde_json::to_string(f).map_err(|e| FeatureError::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_features_jsonl<R: BufRead>(input: R) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| FeatureError::MalformedRecord { line: i + 1, msg: e.to_string() })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ts: f64, kind: SignalingKind) -> Record {
        Record::Signaling(SignalingEvent { ts, ue_id: UeId(1), kind, cell_id: CellId(0), cost: 3 })
    }

    fn i2f(ts: f64) -> Record {
        ev(ts, SignalingKind::PromoteI2F)
    }

    fn starts(ws: &[Window]) -> Vec<(f64, usize)> {
        ws.iter().map(|w| (w.start, w.events.len())).collect()
    }

    #[test]
    fn partition_example() {
        let ws = windowize(&[i2f(1.0), i2f(2.0), i2f(3.0)], 2.0, 2.0, Scope::Network).unwrap();
        assert_eq!(starts(&ws), vec![(0.0, 1), (2.0, 2)]);
        assert!(windowize(&[], 2.0, 2.0, Scope::Network).unwrap().is_empty());
    }

    #[test]
    fn overlapping_windows_share_events() {
        let ws = windowize(&[i2f(1.5)], 2.0, 1.0, Scope::Network).unwrap();
        assert_eq!(starts(&ws), vec![(0.0, 1), (1.0, 1)]);
    }

    #[test]
    fn unordered_stream_and_bad_geometry_are_rejected() {
        let err = windowize(&[i2f(2.0), i2f(1.0)], 2.0, 2.0, Scope::Network).unwrap_err();
        assert_eq!(err, FeatureError::UnorderedStream { index: 1 });
        assert!(matches!(windowize(&[], 0.0, 1.0, Scope::Network), Err(FeatureError::InvalidWindow(_))));
    }

    #[test]
    fn span_includes_empty_windows() {
        let ws = windowize_span(&[i2f(25.0)], 10.0, 10.0, Scope::Network, 0.0..40.0).unwrap();
        assert_eq!(starts(&ws), vec![(0.0, 0), (10.0, 0), (20.0, 1), (30.0, 0)]);
    }

    #[test]
    fn rates_are_counts_over_width() {
        let events: Vec<Record> = (0..5).map(|i| i2f(i as f64 * 2.0)).collect();
        let fv = extract_features(&Window { start: 0.0, width: 10.0, scope: Scope::Network, events });
        assert_eq!(fv.rate(SignalingKind::PromoteI2F), 0.5);
        assert_eq!(fv.total_msg_rate, 1.5);
        assert_eq!(fv.iet_mean, Some(2.0));
        assert_eq!(fv.iet_var, Some(0.0));
        assert_eq!(fv.iet_cv, Some(0.0));
        assert_eq!(fv.promote_demote_ratio, None);
    }

    #[test]
    fn sparse_window_flags_insufficient_data() {
        let fv = extract_features(&Window { start: 0.0, width: 10.0, scope: Scope::Network, events: vec![i2f(1.0)] });
        assert_eq!((fv.iet_mean, fv.lag1_autocorr), (None, None));
    }

    #[test]
    fn inter_event_examples() {
        assert_eq!(inter_event_stats(&[0.0, 1.0, 2.0, 3.0]).unwrap(), (1.0, 0.0, 0.0));
        let (m, v, cv) = inter_event_stats(&[0.0, 1.0, 3.0]).unwrap();
        assert_eq!((m, v), (1.5, 0.25));
        assert!((cv - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(inter_event_stats(&[0.0, 1.0]), Err(FeatureError::InsufficientData { needed: 3, got: 2 }));
    }

    #[test]
    fn autocorr_examples() {
        assert_eq!(autocorr(&[5.0; 4], 1).unwrap(), Autocorr { value: 0.0, zero_variance: true });
        let alt = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        assert!((autocorr(&alt, 1).unwrap().value + 1.0).abs() < 1e-9);
        assert_eq!(autocorr(&[1.0], 1), Err(FeatureError::SeriesTooShort { len: 1, lag: 1 }));
    }

    #[test]
    fn alternating_per_second_counts_give_minus_one() {
        // Counts 3,1,3,1,... over ten one-second bins.
        let mut events = Vec::new();
        for s in 0..10 {
            let n = if s % 2 == 0 { 3 } else { 1 };
            for j in 0..n {
                events.push(i2f(s as f64 + 0.1 + 0.2 * j as f64));
            }
        }
        let fv = extract_features(&Window { start: 0.0, width: 10.0, scope: Scope::Network, events });
        assert!((fv.lag1_autocorr.unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn scope_round_trips_as_text() {
        for s in [Scope::Network, Scope::Cell(CellId(1)), Scope::Ue(UeId(7))] {
            assert_eq!(s.to_string().parse::<Scope>().unwrap(), s);
        }
        assert_eq!(serde_json::to_string(&Scope::Ue(UeId(1))).unwrap(), "\"ue:u0001\"");
    }
}
