use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{DetectError, DetectionVerdict, DetectorKind};
use crate::features::Scope;
use crate::rng;

/// Sequential likelihood-ratio test of an exponential inter-event model with
/// rate `lambda0` against one with rate `lambda1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CusumState {
    pub scope: Scope,
    pub lambda0: f64,
    pub lambda1: f64,
    pub threshold_h: f64,
    pub s: f64,
    pub n_obs: u64,
    /// Index (1-based) of the observation that raised the latest alarm.
    pub alarmed_at: Option<u64>,
}

impl CusumState {
    pub fn new(scope: Scope, lambda0: f64, lambda1: f64, threshold_h: f64) -> Result<Self, DetectError> {
        check_rates(lambda0, lambda1)?;
        if !(threshold_h > 0.0 && threshold_h.is_finite()) {
            return Err(DetectError::InvalidThreshold(threshold_h));
        }
        Ok(Self { scope, lambda0, lambda1, threshold_h, s: 0.0, n_obs: 0, alarmed_at: None })
    }

    pub fn increment(&self, x: f64) -> f64 {
        (self.lambda1 / self.lambda0).ln() - (self.lambda1 - self.lambda0) * x
    }
}

fn check_rates(lambda0: f64, lambda1: f64) -> Result<(), DetectError> {
    if lambda0 > 0.0 && lambda1 > lambda0 && lambda1.is_finite() {
        Ok(())
    } else {
        Err(DetectError::InvalidRates { lambda0, lambda1 })
    }
}

/// Feeds one inter-event time observed at `ts`. The verdict carries the
/// statistic before any post-alarm reset.
pub fn cusum_update(state: &CusumState, x: f64, ts: f64) -> Result<(CusumState, DetectionVerdict), DetectError> {
    if !(x > 0.0) {
        return Err(DetectError::NonPositiveObservation(x));
    }
    let mut next = state.clone();
    next.n_obs += 1;
    let s = (state.s + state.increment(x)).max(0.0);
    let alarmed = s >= state.threshold_h;
    next.s = if alarmed { 0.0 } else { s };
    if alarmed {
        next.alarmed_at = Some(next.n_obs);
    }
    let verdict = DetectionVerdict {
        ts,
        scope: state.scope,
        detector: DetectorKind::Cusum,
        score: s,
        threshold: state.threshold_h,
        alarmed,
        stream: String::new(),
    };
    Ok((next, verdict))
}

pub const GRID_STEP: f64 = 0.05;
pub const GRID_LEN: usize = 1000;

/// Smallest `h = 0.05·i`, `i = 1..=1000`, whose empirical alarm rate per
/// observation under the `lambda0` model stays at or below `target`.
///
/// The same `n_mc` exponential draws are replayed for every grid value.
pub fn calibrate_threshold(lambda0: f64, lambda1: f64, target: f64, n_mc: u64, seed: u64) -> Result<f64, DetectError> {
    check_rates(lambda0, lambda1)?;
    if !(target > 0.0 && target <= 0.1) {
        return Err(DetectError::InvalidTarget(target));
    }
    let needed = (10.0 / target).ceil() as u64;
    if n_mc < needed {
        return Err(DetectError::InsufficientSamples { needed, got: n_mc });
    }
    let mut rng = rng::stream(seed, "cusum-calibration", 0);
    let offset = (lambda1 / lambda0).ln();
    let slope = lambda1 - lambda0;
    let increments: Vec<f64> = (0..n_mc)
        .map(|_| offset - slope * rng::exp_from_bits(rng.next_u64(), lambda0))
        .collect();
    let budget = (target * n_mc as f64).floor() as u64;
    for i in 1..=GRID_LEN {
        let h = GRID_STEP * i as f64;
        if count_alarms(&increments, h, budget + 1) <= budget {
            return Ok(h);
        }
    }
    Err(DetectError::CalibrationFailed)
}

/// Alarms raised over `increments` at threshold `h`, stopping early at `cap`.
fn count_alarms(increments: &[f64], h: f64, cap: u64) -> u64 {
    let mut s = 0.0f64;
    let mut alarms = 0;
    for &inc in increments {
        s = (s + inc).max(0.0);
        if s >= h {
            alarms += 1;
            s = 0.0;
            if alarms >= cap {
                break;
            }
        }
    }
    alarms
}

/// [`calibrate_threshold`] with results memoised per argument tuple. The
/// alarm rate depends only on `lambda1 / lambda0`, so callers normalise
/// `lambda0` to 1.
pub fn calibrated_threshold_for_ratio(ratio: f64, target: f64, n_mc: u64, seed: u64) -> Result<f64, DetectError> {
    type Key = (u64, u64, u64, u64);
    static CACHE: OnceLock<Mutex<BTreeMap<Key, f64>>> = OnceLock::new();
    let key = (ratio.to_bits(), target.to_bits(), n_mc, seed);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&h) = cache.lock().expect("cache lock").get(&key) {
        return Ok(h);
    }
    let h = calibrate_threshold(1.0, ratio, target, n_mc, seed)?;
    cache.lock().expect("cache lock").insert(key, h);
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(h: f64) -> CusumState {
        CusumState::new(Scope::Network, 1.0, 2.0, h).unwrap()
    }

    #[test]
    fn short_gap_accumulates_evidence() {
        let (next, v) = cusum_update(&state(5.0), 0.1, 0.0).unwrap();
        assert!((next.s - (2f64.ln() - 0.1)).abs() < 1e-15);
        assert!((next.s - 0.5931).abs() < 1e-4);
        assert!(!v.alarmed);
    }

    #[test]
    fn long_gap_clamps_to_zero() {
        let (next, _) = cusum_update(&state(5.0), 2.0, 0.0).unwrap();
        assert_eq!(next.s, 0.0);
    }

    #[test]
    fn crossing_alarms_and_resets() {
        let mut st = state(5.0);
        st.s = 4.9;
        st.n_obs = 7;
        // increment = ln 2 - 0.01 > 0.1
        let (next, v) = cusum_update(&st, 0.01, 3.0).unwrap();
        assert!(v.alarmed);
        assert!(v.score >= 5.0);
        assert_eq!(next.s, 0.0);
        assert_eq!(next.alarmed_at, Some(8));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(cusum_update(&state(5.0), 0.0, 0.0).unwrap_err(), DetectError::NonPositiveObservation(0.0));
        assert!(CusumState::new(Scope::Network, 2.0, 1.0, 1.0).is_err());
        assert_eq!(calibrate_threshold(1.0, 2.0, 0.5, 1000, 0), Err(DetectError::InvalidTarget(0.5)));
        assert!(matches!(
            calibrate_threshold(1.0, 2.0, 1e-2, 999, 0),
            Err(DetectError::InsufficientSamples { needed: 1000, got: 999 })
        ));
    }

    #[test]
    fn calibration_is_deterministic_and_scale_free() {
        let a = calibrate_threshold(1.0, 10.0, 1e-3, 20_000, 4).unwrap();
        assert_eq!(a, calibrate_threshold(1.0, 10.0, 1e-3, 20_000, 4).unwrap());
        assert_eq!(a, calibrate_threshold(0.25, 2.5, 1e-3, 20_000, 4).unwrap());
    }

    proptest! {
        #[test]
        fn statistic_stays_non_negative(xs in proptest::collection::vec(1e-6f64..20.0, 1..200), h in 0.5f64..20.0) {
            let mut st = CusumState::new(Scope::Network, 0.5, 4.0, h).unwrap();
            for (i, x) in xs.into_iter().enumerate() {
                let (next, v) = cusum_update(&st, x, i as f64).unwrap();
                prop_assert!(next.s >= 0.0 && v.score >= 0.0);
                prop_assert!(!v.alarmed || v.score >= h);
                st = next;
            }
        }
    }
}
