use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProfileKind {
    Web,
    Messaging,
    IdleHeavy,
    Streaming,
}

impl ProfileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::Web => "WEB",
            ProfileKind::Messaging => "MESSAGING",
            ProfileKind::IdleHeavy => "IDLE_HEAVY",
            ProfileKind::Streaming => "STREAMING",
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileKind {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "WEB" => Ok(ProfileKind::Web),
            "MESSAGING" => Ok(ProfileKind::Messaging),
            "IDLE_HEAVY" => Ok(ProfileKind::IdleHeavy),
            "STREAMING" => Ok(ProfileKind::Streaming),
            other => Err(SimError::UnknownProfileKind(other.to_string())),
        }
    }
}

/// Parametric distribution for sizes (bytes) and durations (seconds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Dist {
    Const { value: f64 },
    Exp { mean: f64 },
    LogNormal { median: f64, sigma: f64 },
    Uniform { low: f64, high: f64 },
}

impl Dist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Const { value } => value,
            Dist::Exp { mean } => Exp::new(1.0 / mean).map(|d| d.sample(rng)).unwrap_or(0.0),
            Dist::LogNormal { median, sigma } => {
                LogNormal::new(median.ln(), sigma).map(|d| d.sample(rng)).unwrap_or(median)
            }
            Dist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Const { value } => value,
            Dist::Exp { mean } => mean,
            Dist::LogNormal { median, sigma } => median * (0.5 * sigma * sigma).exp(),
            Dist::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            Dist::Const { value } => value >= 0.0,
            Dist::Exp { mean } => mean > 0.0,
            Dist::LogNormal { median, sigma } => median > 0.0 && sigma >= 0.0,
            Dist::Uniform { low, high } => low >= 0.0 && high >= low,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid distribution {self:?}"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub kind: ProfileKind,
    /// Mean sessions per hour at diurnal weight 1.
    pub session_rate: f64,
    pub session_size: Dist,
    /// Session holding time (reading time, call length, stream length).
    pub think_time: Dist,
    /// 24 hourly weights with mean 1.
    pub diurnal_shape: Vec<f64>,
}

const HOUR: f64 = 3600.0;

const BASE_DIURNAL: [f64; 24] = [
    0.45, 0.30, 0.22, 0.20, 0.22, 0.35, 0.60, 0.90, 1.15, 1.25, 1.30, 1.35, //
    1.40, 1.35, 1.30, 1.30, 1.35, 1.45, 1.50, 1.55, 1.50, 1.35, 1.05, 0.75,
];

impl TrafficProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| SimError::InvalidParams(format!("{} profile: {m}", self.kind));
        if !(self.session_rate >= 0.0 && self.session_rate.is_finite()) {
            return Err(bad("session_rate must be >= 0".into()));
        }
        self.session_size.validate().map_err(bad)?;
        self.think_time.validate().map_err(bad)?;
        if self.diurnal_shape.len() != 24 || self.diurnal_shape.iter().any(|w| !(*w >= 0.0)) {
            return Err(bad("diurnal_shape needs 24 non-negative weights".into()));
        }
        let sum: f64 = self.diurnal_shape.iter().sum();
        if (sum - 24.0).abs() > 1e-9 {
            return Err(bad(format!("diurnal weights sum to {sum}, expected 24")));
        }
        Ok(())
    }

    /// Session arrival rate (per second) at simulated time `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.session_rate / HOUR * self.diurnal_shape[hour_of_day(t)]
    }

    pub fn peak_rate(&self) -> f64 {
        let max = self.diurnal_shape.iter().cloned().fold(0.0, f64::max);
        self.session_rate / HOUR * max
    }

    /// Expected number of sessions started in `[from, to)`.
    pub fn expected_sessions(&self, from: f64, to: f64) -> f64 {
        let mut total = 0.0;
        let mut t = from;
        while t < to {
            let boundary = ((t / HOUR).floor() + 1.0) * HOUR;
            let end = boundary.min(to);
            total += self.rate_at(t) * (end - t);
            t = end;
        }
        total
    }
}

fn hour_of_day(t: f64) -> usize {
    ((t / HOUR).floor() as i64).rem_euclid(24) as usize
}

/// Default profile for `kind`, with the diurnal shape perturbed by `seed`.
///
/// Rates and size/holding-time tables are fixed per kind; only the hourly
/// weights vary with the seed (±10%, renormalised to mean 1).
pub fn synth_profile(kind: ProfileKind, seed: u64) -> TrafficProfile {
    let (session_rate, session_size, think_time) = match kind {
        ProfileKind::Web => (
            12.0,
            Dist::LogNormal { median: 120_000.0, sigma: 1.0 },
            Dist::Exp { mean: 5.0 },
        ),
        ProfileKind::Messaging => (
            20.0,
            Dist::LogNormal { median: 800.0, sigma: 0.8 },
            Dist::Exp { mean: 2.0 },
        ),
        ProfileKind::IdleHeavy => (
            1.0,
            Dist::LogNormal { median: 2_000.0, sigma: 0.5 },
            Dist::Exp { mean: 2.0 },
        ),
        ProfileKind::Streaming => (
            3.0,
            Dist::LogNormal { median: 15_000_000.0, sigma: 0.7 },
            Dist::Exp { mean: 300.0 },
        ),
    };
    let mut rng = rng::stream(seed, "profile", kind as u64);
    let mut shape: Vec<f64> = BASE_DIURNAL
        .iter()
        .map(|w| w * (0.9 + 0.2 * rng.random::<f64>()))
        .collect();
    let scale = 24.0 / shape.iter().sum::<f64>();
    shape.iter_mut().for_each(|w| *w *= scale);
    TrafficProfile { kind, session_rate, session_size, think_time, diurnal_shape: shape }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_is_deterministic_per_seed() {
        assert_eq!(synth_profile(ProfileKind::IdleHeavy, 7), synth_profile(ProfileKind::IdleHeavy, 7));
        assert_ne!(
            synth_profile(ProfileKind::IdleHeavy, 7).diurnal_shape,
            synth_profile(ProfileKind::IdleHeavy, 8).diurnal_shape
        );
    }

    #[test]
    fn web_is_busier_than_idle_heavy() {
        assert!(synth_profile(ProfileKind::Web, 0).session_rate > synth_profile(ProfileKind::IdleHeavy, 0).session_rate);
    }

    #[test]
    fn diurnal_shape_has_mean_one() {
        for kind in [ProfileKind::Web, ProfileKind::Messaging, ProfileKind::IdleHeavy, ProfileKind::Streaming] {
            for seed in 0..20 {
                let p = synth_profile(kind, seed);
                let sum: f64 = p.diurnal_shape.iter().sum();
                assert!((sum - 24.0).abs() <= 1e-9, "{kind} seed {seed}: {sum}");
                p.validate().unwrap();
            }
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert_eq!("VIDEO".parse::<ProfileKind>(), Err(SimError::UnknownProfileKind("VIDEO".into())));
    }

    #[test]
    fn expected_sessions_integrates_hour_by_hour() {
        let p = synth_profile(ProfileKind::Web, 3);
        let day = p.expected_sessions(0.0, 24.0 * HOUR);
        assert!((day - 24.0 * p.session_rate).abs() < 1e-9);
        let half = p.expected_sessions(1800.0, 5400.0);
        let manual = p.rate_at(1800.0) * 1800.0 + p.rate_at(3600.0) * 1800.0;
        assert!((half - manual).abs() < 1e-12);
    }
}
