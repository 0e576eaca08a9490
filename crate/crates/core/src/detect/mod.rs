//! Change detection, neural scoring, attack classification and fusion.
//!
//! Two detector families produce [`DetectionVerdict`]s per window and scope:
//! an exponential CUSUM over inter-event times ([`cusum`]) and a random
//! neural network over window features ([`rnn`]). [`classify`] labels
//! alarmed windows and [`fuse`] combines verdicts into [`Alert`]s.
//! [`pipeline`] wires these together over an event stream.

mod classify;
pub mod cusum;
pub mod pipeline;
pub mod rnn;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, Scope};

pub use classify::{classify, fuse, AttackClass, ClassifierRules, FusionMode, FusionPolicy};
pub use cusum::{calibrate_threshold, cusum_update, CusumState};
pub use pipeline::{
    feature_scales, labelled_windows, read_alerts_jsonl, write_alerts_jsonl, Baseline, Detector, DetectorConfig,
    RNN_FEATURES,
};
pub use rnn::{rnn_fixed_point, rnn_grad, rnn_train, RnnGradient, RnnModel, TrainConfig, TrainingSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("observation must be > 0, got {0}")]
    NonPositiveObservation(f64),
    #[error("need lambda1 > lambda0 > 0, got lambda0={lambda0}, lambda1={lambda1}")]
    InvalidRates { lambda0: f64, lambda1: f64 },
    #[error("threshold must be > 0, got {0}")]
    InvalidThreshold(f64),
    #[error("false-alarm target {0} outside (0, 0.1]")]
    InvalidTarget(f64),
    #[error("need at least {needed} Monte Carlo samples, got {got}")]
    InsufficientSamples { needed: u64, got: u64 },
    #[error("no threshold on the calibration grid meets the target")]
    CalibrationFailed,
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("unstable network: neuron {neuron} reaches q={q}")]
    UnstableNetwork { neuron: usize, q: f64 },
    #[error("training diverged: step size underflow")]
    DivergedTraining,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("verdicts span more than one scope")]
    MixedScopes,
    #[error("malformed detector config: {0}")]
    MalformedConfig(String),
    #[error("malformed record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DetectError {
    fn from(e: std::io::Error) -> Self {
        DetectError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DetectorKind {
    Cusum,
    Rnn,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Cusum => "CUSUM",
            DetectorKind::Rnn => "RNN",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub ts: f64,
    pub scope: Scope,
    pub detector: DetectorKind,
    /// Raw score: the CUSUM statistic or the RNN output activation.
    pub score: f64,
    /// Score at or above which the detector alarms.
    pub threshold: f64,
    pub alarmed: bool,
    /// Free-form tag naming the monitored stream, e.g. `signaling`.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub stream: String,
}

impl DetectionVerdict {
    /// Score mapped to `[0, 1]`: `min(1, s/h)` for CUSUM, `q` for RNN.
    pub fn normalized_score(&self) -> f64 {
        match self.detector {
            DetectorKind::Cusum => (self.score / self.threshold).clamp(0.0, 1.0),
            DetectorKind::Rnn => self.score.clamp(0.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: u64,
    pub ts: f64,
    pub scope: Scope,
    pub attack_class: AttackClass,
    pub confidence: f64,
    pub contributing: Vec<DetectionVerdict>,
    #[serde(default)]
    pub acked: bool,
}
