use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Alert, DetectError, DetectionVerdict};
use crate::features::FeatureVector;
use crate::netsim::SignalingKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackClass {
    Normal,
    SignalingStorm,
    BotnetSignalingDdos,
    PremiumFraud,
    Unknown,
}

impl AttackClass {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackClass::Normal => "NORMAL",
            AttackClass::SignalingStorm => "SIGNALING_STORM",
            AttackClass::BotnetSignalingDdos => "BOTNET_SIGNALING_DDOS",
            AttackClass::PremiumFraud => "PREMIUM_FRAUD",
            AttackClass::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for AttackClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttackClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            AttackClass::Normal,
            AttackClass::SignalingStorm,
            AttackClass::BotnetSignalingDdos,
            AttackClass::PremiumFraud,
            AttackClass::Unknown,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| format!("unknown attack class {s:?}"))
    }
}

/// Absolute thresholds of the rule layer, usually derived from a baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierRules {
    /// PROMOTE_I2F events/s at or above which promotions count as high.
    pub storm_promote_rate: f64,
    /// Largest share of promotions reaching DCH still considered low volume.
    pub storm_max_dch_fraction: f64,
    /// Allowed deviation of the promote/demote ratio from 1.
    pub storm_ratio_tolerance: f64,
    /// Active UEs at or above which a storm signature counts as a botnet.
    pub botnet_min_active_ues: u64,
    /// Premium charge units/s at or above which billing counts as anomalous.
    pub premium_charge_rate: f64,
}

/// Labels a window. Storm signatures take precedence over billing anomalies.
pub fn classify(features: &FeatureVector, verdicts: &[DetectionVerdict], rules: &ClassifierRules) -> AttackClass {
    if !verdicts.iter().any(|v| v.alarmed) {
        return AttackClass::Normal;
    }
    let ratio_ok = features
        .promote_demote_ratio
        .is_some_and(|r| (r - 1.0).abs() <= rules.storm_ratio_tolerance);
    let storm = ratio_ok
        && features.rate(SignalingKind::PromoteI2F) >= rules.storm_promote_rate
        && features.dch_fraction() <= rules.storm_max_dch_fraction;
    if storm {
        if features.active_ue_count >= rules.botnet_min_active_ues {
            AttackClass::BotnetSignalingDdos
        } else {
            AttackClass::SignalingStorm
        }
    } else if features.premium_charge_rate >= rules.premium_charge_rate {
        AttackClass::PremiumFraud
    } else {
        AttackClass::Unknown
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Alert when any detector alarms.
    #[default]
    Any,
    /// Alert only when every detector alarms.
    All,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionPolicy {
    pub mode: FusionMode,
}

/// Combines one window's verdicts into an alert with `alert_id` 0; the
/// caller assigns ids. Confidence is the noisy-OR of the normalised scores of
/// the alarmed verdicts. `features` classifies the alert and must share the
/// verdicts' scope.
pub fn fuse(
    verdicts: &[DetectionVerdict],
    features: &FeatureVector,
    policy: &FusionPolicy,
    rules: &ClassifierRules,
) -> Result<Option<Alert>, DetectError> {
    if verdicts.iter().any(|v| v.scope != features.scope) {
        return Err(DetectError::MixedScopes);
    }
    let fire = match policy.mode {
        FusionMode::Any => verdicts.iter().any(|v| v.alarmed),
        FusionMode::All => !verdicts.is_empty() && verdicts.iter().all(|v| v.alarmed),
    };
    if !fire {
        return Ok(None);
    }
    let attack_class = classify(features, verdicts, rules);
    if attack_class == AttackClass::Normal {
        return Ok(None);
    }
    let miss: f64 = verdicts.iter().filter(|v| v.alarmed).map(|v| 1.0 - v.normalized_score()).product();
    let ts = verdicts.iter().map(|v| v.ts).fold(f64::NEG_INFINITY, f64::max);
    Ok(Some(Alert {
        alert_id: 0,
        ts,
        scope: features.scope,
        attack_class,
        confidence: (1.0 - miss).clamp(0.0, 1.0),
        contributing: verdicts.to_vec(),
        acked: false,
    }))
}
