//! Batch detection over a merged signaling/CDR stream.
//!
//! The stream is cut into back-to-back windows. For each window:
//!
//! 1. a CUSUM over PROMOTE_I2F inter-event times and one over premium CDR
//!    emission times consume the window's observations;
//! 2. the RNN, when configured, scores the window's features;
//! 3. the verdicts are fused; alarmed windows are classified on features of
//!    a longer context window ending with the detection window.
//!
//! Alerts are stamped with the end of their window.

use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::cusum::calibrated_threshold_for_ratio;
use super::{
    cusum_update, fuse, Alert, ClassifierRules, CusumState, DetectError, DetectionVerdict, FusionPolicy, RnnModel,
    TrainingSample,
};
use crate::features::{extract_features, window_at, windowize_span, FeatureVector, Record, Scope};
use crate::netsim::{Service, SignalingKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CusumConfig {
    pub enabled: bool,
    /// Normal event rate; estimated from the baseline when absent.
    pub lambda0: Option<f64>,
    /// Attack rate as a multiple of `lambda0`.
    pub ratio: f64,
    /// Fixed threshold; calibrated by Monte Carlo when absent.
    pub threshold_h: Option<f64>,
    pub target_false_alarm: f64,
    pub calibration_samples: u64,
    /// Floor applied to inter-event times so simultaneous events stay
    /// valid observations.
    pub min_interval_s: f64,
}

impl Default for CusumConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lambda0: None,
            ratio: 10.0,
            threshold_h: None,
            target_false_alarm: 1e-4,
            calibration_samples: 1_000_000,
            min_interval_s: 1e-3,
        }
    }
}

/// Rule-layer settings relative to the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub storm_promote_factor: f64,
    pub storm_max_dch_fraction: f64,
    pub storm_ratio_tolerance: f64,
    pub botnet_min_active_ues: u64,
    pub premium_factor: f64,
    /// Lower bound for the baseline premium charge rate (units/s).
    pub premium_floor: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            storm_promote_factor: 5.0,
            storm_max_dch_fraction: 0.25,
            storm_ratio_tolerance: 0.5,
            botnet_min_active_ues: 200,
            premium_factor: 5.0,
            premium_floor: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    /// Path of a `model.json`; the RNN is skipped when absent.
    pub model: Option<String>,
    /// Overrides the model's own alarm threshold.
    pub threshold: Option<f64>,
}

/// Detector configuration file (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Seed of the threshold calibration.
    pub seed: u64,
    pub scope: Scope,
    pub window_s: f64,
    pub context_s: f64,
    /// Leading part of the stream treated as attack-free when no baseline
    /// is supplied.
    pub training_window_s: f64,
    /// Path of a `baseline.json`, resolved relative to the config file.
    pub baseline: Option<String>,
    pub signaling: CusumConfig,
    pub billing: CusumConfig,
    pub rnn: RnnConfig,
    pub fusion: FusionPolicy,
    pub classify: ClassifyConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scope: Scope::Network,
            window_s: 10.0,
            context_s: 60.0,
            training_window_s: 300.0,
            baseline: None,
            signaling: CusumConfig::default(),
            billing: CusumConfig::default(),
            rnn: RnnConfig::default(),
            fusion: FusionPolicy::default(),
            classify: ClassifyConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, DetectError> {
        let cfg: Self = toml::from_str(text).map_err(|e| DetectError::MalformedConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: &str| Err(DetectError::MalformedConfig(m.to_string()));
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return bad("window_s must be > 0");
        }
        if !(self.context_s >= self.window_s && self.context_s.is_finite()) {
            return bad("context_s must be >= window_s");
        }
        if !(self.training_window_s > 0.0) {
            return bad("training_window_s must be > 0");
        }
        for c in [&self.signaling, &self.billing] {
            if !(c.ratio > 1.0) {
                return bad("cusum ratio must be > 1");
            }
            if !(c.min_interval_s > 0.0) {
                return bad("min_interval_s must be > 0");
            }
        }
        Ok(())
    }
}

/// Attack-free reference rates for one scope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub scope: Scope,
    pub span_s: f64,
    /// PROMOTE_I2F events per second.
    pub promote_rate: f64,
    /// Premium-rate CDRs per second.
    pub premium_rate: f64,
    /// Premium charge units per second.
    pub premium_charge_rate: f64,
}

impl Baseline {
    /// Rates over `span`. Counts are floored at one event so a quiet
    /// reference still yields a positive rate.
    pub fn fit(records: &[Record], scope: Scope, span: Range<f64>) -> Result<Self, DetectError> {
        let width = span.end - span.start;
        if !(width > 0.0) {
            return Err(DetectError::InvalidDataset(format!("empty baseline span {span:?}")));
        }
        let w = window_at(records, span.start, width, scope);
        let promotions = w.signaling().filter(|e| e.kind == SignalingKind::PromoteI2F).count();
        let premium: Vec<_> = w.cdrs().filter(|c| c.service == Service::PremiumSms).collect();
        let charge: u64 = premium.iter().map(|c| c.charge_units.milli()).sum();
        Ok(Baseline {
            scope,
            span_s: width,
            promote_rate: promotions.max(1) as f64 / width,
            premium_rate: premium.len().max(1) as f64 / width,
            premium_charge_rate: charge as f64 / 1000.0 / width,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRun {
    pub baseline: Baseline,
    pub signaling_threshold: Option<f64>,
    pub billing_threshold: Option<f64>,
    pub features: Vec<FeatureVector>,
    pub alerts: Vec<Alert>,
}

pub struct Detector {
    pub config: DetectorConfig,
    pub baseline: Option<Baseline>,
    pub model: Option<RnnModel>,
}

struct Monitor {
    state: CusumState,
    times: Vec<f64>,
    next: usize,
    prev: f64,
    min_interval: f64,
    label: &'static str,
}

impl Monitor {
    /// Consumes observations before `end` and summarises them as one
    /// verdict stamped `ts`.
    fn advance(&mut self, end: f64, ts: f64) -> Result<DetectionVerdict, DetectError> {
        let mut peak = self.state.s;
        let mut alarmed = false;
        while self.next < self.times.len() && self.times[self.next] < end {
            let t = self.times[self.next];
            let x = (t - self.prev).max(self.min_interval);
            let (state, v) = cusum_update(&self.state, x, t)?;
            peak = peak.max(v.score);
            alarmed |= v.alarmed;
            self.state = state;
            self.prev = t;
            self.next += 1;
        }
        Ok(DetectionVerdict {
            ts,
            scope: self.state.scope,
            detector: super::DetectorKind::Cusum,
            score: peak,
            threshold: self.state.threshold_h,
            alarmed,
            stream: self.label.to_string(),
        })
    }
}

impl Detector {
    pub fn new(config: DetectorConfig, baseline: Option<Baseline>, model: Option<RnnModel>) -> Result<Self, DetectError> {
        config.validate()?;
        let model = match model {
            Some(mut m) => {
                m.validate()?;
                if let Some(t) = config.rnn.threshold {
                    m.threshold = t;
                }
                Some(m)
            }
            None => None,
        };
        Ok(Self { config, baseline, model })
    }

    fn monitor(
        &self,
        cfg: &super::pipeline::CusumConfig,
        lambda0: f64,
        times: Vec<f64>,
        label: &'static str,
    ) -> Result<Option<Monitor>, DetectError> {
        if !cfg.enabled {
            return Ok(None);
        }
        let h = match cfg.threshold_h {
            Some(h) => h,
            None => calibrated_threshold_for_ratio(
                cfg.ratio,
                cfg.target_false_alarm,
                cfg.calibration_samples,
                self.config.seed,
            )?,
        };
        let state = CusumState::new(self.config.scope, lambda0, cfg.ratio * lambda0, h)?;
        Ok(Some(Monitor { state, times, next: 0, prev: 0.0, min_interval: cfg.min_interval_s, label }))
    }

    pub fn rules(&self, baseline: &Baseline) -> ClassifierRules {
        let c = &self.config.classify;
        ClassifierRules {
            storm_promote_rate: c.storm_promote_factor * baseline.promote_rate,
            storm_max_dch_fraction: c.storm_max_dch_fraction,
            storm_ratio_tolerance: c.storm_ratio_tolerance,
            botnet_min_active_ues: c.botnet_min_active_ues,
            premium_charge_rate: c.premium_factor * baseline.premium_charge_rate.max(c.premium_floor),
        }
    }

    /// Runs every detector over `records` (time-ordered) for windows starting
    /// in `[0, until)`.
    pub fn run(&self, records: &[Record], until: f64) -> Result<DetectionRun, DetectError> {
        let cfg = &self.config;
        let scope = cfg.scope;
        let windows = windowize_span(records, cfg.window_s, cfg.window_s, scope, 0.0..until)?;
        let baseline = match &self.baseline {
            Some(b) => b.clone(),
            None => Baseline::fit(records, scope, 0.0..cfg.training_window_s.min(until.max(cfg.window_s)))?,
        };
        let rules = self.rules(&baseline);

        let scoped = records.iter().filter(|r| r.in_scope(scope));
        let promote_times: Vec<f64> = scoped
            .clone()
            .filter_map(|r| match r {
                Record::Signaling(e) if e.kind == SignalingKind::PromoteI2F => Some(e.ts),
                _ => None,
            })
            .collect();
        let premium_times: Vec<f64> = scoped
            .filter_map(|r| match r {
                Record::Cdr(c) if c.service == Service::PremiumSms => Some(c.emitted_at()),
                _ => None,
            })
            .collect();
        let lambda0_sig = cfg.signaling.lambda0.unwrap_or(baseline.promote_rate);
        let lambda0_bill = cfg.billing.lambda0.unwrap_or(baseline.premium_rate);
        let mut monitors: Vec<Monitor> = [
            self.monitor(&cfg.signaling, lambda0_sig, promote_times, "signaling")?,
            self.monitor(&cfg.billing, lambda0_bill, premium_times, "billing")?,
        ]
        .into_iter()
        .flatten()
        .collect();
        let thresholds: Vec<Option<f64>> = ["signaling", "billing"]
            .iter()
            .map(|l| monitors.iter().find(|m| m.label == *l).map(|m| m.state.threshold_h))
            .collect();

        let mut features = Vec::with_capacity(windows.len());
        let mut alerts = Vec::new();
        for w in &windows {
            let end = w.end();
            let fv = extract_features(w);
            let mut verdicts = Vec::new();
            for m in monitors.iter_mut() {
                verdicts.push(m.advance(end, end)?);
            }
            if let Some(model) = &self.model {
                let mut v = model.verdict(&fv, end)?;
                v.stream = "features".into();
                verdicts.push(v);
            }
            let ctx_start = (end - cfg.context_s).max(0.0);
            let context = extract_features(&window_at(records, ctx_start, end - ctx_start, scope));
            if let Some(mut alert) = fuse(&verdicts, &context, &cfg.fusion, &rules)? {
                alert.alert_id = alerts.len() as u64 + 1;
                alerts.push(alert);
            }
            features.push(fv);
        }
        Ok(DetectionRun {
            baseline,
            signaling_threshold: thresholds[0],
            billing_threshold: thresholds[1],
            features,
            alerts,
        })
    }
}

/// Features of back-to-back windows over `[0, until)`, labelled by whether
/// the window overlaps any of `attacks`. Targets are `(0.9, 0.1)` for attack
/// windows and `(0.1, 0.9)` otherwise.
pub fn labelled_windows(
    records: &[Record],
    until: f64,
    width: f64,
    scope: Scope,
    attacks: &[Range<f64>],
) -> Result<Vec<TrainingSample>, DetectError> {
    let windows = windowize_span(records, width, width, scope, 0.0..until)?;
    Ok(windows
        .iter()
        .map(|w| {
            let attack = attacks.iter().any(|a| w.start < a.end && a.start < w.end());
            let target = if attack { vec![0.9, 0.1] } else { vec![0.1, 0.9] };
            TrainingSample { features: extract_features(w), target }
        })
        .collect())
}

/// Default RNN inputs.
pub const RNN_FEATURES: [&str; 8] = [
    "total_msg_rate",
    "rate.PROMOTE_I2F",
    "rate.DEMOTE_F2I",
    "rate.PROMOTE_F2D",
    "rate.DEMOTE_D2F",
    "active_ue_count",
    "max_per_ue_rate",
    "premium_charge_rate",
];

/// Per-feature scale: the largest value seen in the dataset (1 when zero).
pub fn feature_scales(names: &[&str], dataset: &[TrainingSample]) -> Vec<f64> {
    names
        .iter()
        .map(|name| {
            let max = dataset.iter().filter_map(|s| s.features.get(name)).fold(0.0, f64::max);
            if max > 0.0 {
                max
            } else {
                1.0
            }
        })
        .collect()
}

pub fn write_alerts_jsonl<W: Write>(mut out: W, alerts: &[Alert]) -> Result<(), DetectError> {
    for a in alerts {
        let line = serde_json::to_string(a).map_err(|e| DetectError::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_alerts_jsonl<R: BufRead>(input: R) -> Result<Vec<Alert>, DetectError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DetectError::MalformedRecord { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{CellId, SignalingEvent, UeId};

    fn i2f(ts: f64, ue: u32) -> Record {
        Record::Signaling(SignalingEvent {
            ts,
            ue_id: UeId(ue),
            kind: SignalingKind::PromoteI2F,
            cell_id: CellId(0),
            cost: 3,
        })
    }

    fn f2i(ts: f64, ue: u32) -> Record {
        Record::Signaling(SignalingEvent { ts, ue_id: UeId(ue), kind: SignalingKind::DemoteF2I, cell_id: CellId(0), cost: 2 })
    }

    fn fixed_threshold() -> DetectorConfig {
        let mut cfg = DetectorConfig::default();
        cfg.signaling.threshold_h = Some(8.0);
        cfg.billing.enabled = false;
        cfg
    }

    #[test]
    fn default_config_parses_from_empty_file() {
        assert_eq!(DetectorConfig::from_toml_str("").unwrap(), DetectorConfig::default());
        assert!(matches!(DetectorConfig::from_toml_str("window_s = 0"), Err(DetectError::MalformedConfig(_))));
        assert!(matches!(DetectorConfig::from_toml_str("bogus = 1"), Err(DetectError::MalformedConfig(_))));
    }

    #[test]
    fn steady_stream_raises_no_alert_and_burst_does() {
        // One promotion/demotion pair every 10 s, then 50 bots every 15 s.
        let mut records = Vec::new();
        for k in 0..60 {
            records.push(i2f(k as f64 * 10.0 + 1.0, 0));
            records.push(f2i(k as f64 * 10.0 + 7.0, 0));
        }
        for k in 0..6 {
            let t = 400.0 + 15.0 * k as f64;
            for b in 1..=50 {
                records.push(i2f(t, b));
            }
            for b in 1..=50 {
                records.push(f2i(t + 12.0, b));
            }
        }
        records.sort_by(|a, b| a.ts().total_cmp(&b.ts()));
        let det = Detector::new(fixed_threshold(), None, None).unwrap();
        let run = det.run(&records, 600.0).unwrap();
        assert!(run.alerts.iter().all(|a| a.ts > 400.0));
        assert!(!run.alerts.is_empty());
        assert_eq!(run.alerts[0].ts, 410.0);
        assert!(run.alerts.windows(2).all(|w| w[0].alert_id < w[1].alert_id));
        assert_eq!(run.features.len(), 60);
    }

    #[test]
    fn alerts_round_trip_through_jsonl() {
        let alert = Alert {
            alert_id: 1,
            ts: 10.0,
            scope: Scope::Network,
            attack_class: super::super::AttackClass::Unknown,
            confidence: 1.0,
            contributing: Vec::new(),
            acked: false,
        };
        let mut buf = Vec::new();
        write_alerts_jsonl(&mut buf, &[alert.clone()]).unwrap();
        assert_eq!(read_alerts_jsonl(&buf[..]).unwrap(), vec![alert]);
    }
}
