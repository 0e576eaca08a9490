//! Attacker behaviour injected into a [`Scenario`].
//!
//! Attacks never run their own simulation: they add timestamped stimuli to the
//! scenario, which the simulator feeds through the same RRC machine as normal
//! traffic. Each spec draws from a stream keyed by its index, so the draws of
//! normal traffic are identical with and without attacks.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{RrcParams, Scenario, UeId};
use crate::rng;

pub const DEFAULT_PING_PERIOD: f64 = 15.0;
pub const DEFAULT_PING_BYTES: u64 = 64;
pub const DEFAULT_FRAUD_RATE: f64 = 60.0;
pub const DEFAULT_PREMIUM_PEER: &str = "900999";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("unknown UE {0}")]
    UnknownUE(UeId),
    #[error("attack window [{start}, {stop}) is not inside [0, {horizon}]")]
    WindowOutOfHorizon { start: f64, stop: f64, horizon: f64 },
    #[error("ping period {period}s does not exceed the FACH inactivity timer {t_fach}s")]
    PeriodTooShort { period: f64, t_fach: f64 },
    #[error("invalid attack spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackKind {
    SignalingStorm,
    BotnetSignalingDdos,
    PremiumFraud,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::SignalingStorm => "SIGNALING_STORM",
            AttackKind::BotnetSignalingDdos => "BOTNET_SIGNALING_DDOS",
            AttackKind::PremiumFraud => "PREMIUM_FRAUD",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kind-specific parameters; fields irrelevant to a kind are ignored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    /// Seconds between pings (storm, DDoS).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ping_period: Option<f64>,
    /// Phase jitter as a fraction of the period (DDoS).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
    /// Expected number of bots (DDoS); must match `bot_ids` when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bot_count: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ping_bytes: Option<u64>,
    /// Premium messages per bot per hour (fraud).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub messages_per_hour: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub premium_peer: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub start: f64,
    pub stop: f64,
    pub bot_ids: BTreeSet<UeId>,
    #[serde(default)]
    pub params: AttackParams,
}

impl AttackSpec {
    pub fn ping_period(&self) -> f64 {
        self.params.ping_period.unwrap_or(DEFAULT_PING_PERIOD)
    }

    pub fn ping_bytes(&self) -> u64 {
        self.params.ping_bytes.unwrap_or(DEFAULT_PING_BYTES)
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<(), AttackError> {
        if !(self.start >= 0.0 && self.start < self.stop && self.stop <= scenario.horizon) {
            return Err(AttackError::WindowOutOfHorizon { start: self.start, stop: self.stop, horizon: scenario.horizon });
        }
        if self.bot_ids.is_empty() {
            return Err(AttackError::InvalidSpec("bot_ids is empty".into()));
        }
        if let Some(&missing) = self.bot_ids.iter().find(|id| scenario.ue(**id).is_none()) {
            return Err(AttackError::UnknownUE(missing));
        }
        match self.kind {
            AttackKind::SignalingStorm | AttackKind::BotnetSignalingDdos => {
                let period = self.ping_period();
                if !(period > 0.0 && period.is_finite()) {
                    return Err(AttackError::InvalidSpec("ping_period must be > 0".into()));
                }
                if let Some(j) = self.params.jitter {
                    if !(0.0..=1.0).contains(&j) {
                        return Err(AttackError::InvalidSpec("jitter must lie in [0, 1]".into()));
                    }
                }
                if let Some(n) = self.params.bot_count {
                    if n as usize != self.bot_ids.len() {
                        return Err(AttackError::InvalidSpec(format!(
                            "bot_count {n} does not match {} bot ids",
                            self.bot_ids.len()
                        )));
                    }
                }
            }
            AttackKind::PremiumFraud => {
                let rate = self.params.messages_per_hour.unwrap_or(DEFAULT_FRAUD_RATE);
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(AttackError::InvalidSpec("messages_per_hour must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackAction {
    /// Minimal data arrival forcing an RRC promotion.
    Ping { bytes: u64 },
    /// One premium-rate SMS billed to the bot.
    PremiumSms { peer: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledStimulus {
    pub at: f64,
    pub ue_id: UeId,
    pub spec_index: usize,
    #[serde(flatten)]
    pub action: AttackAction,
}

/// Returns `scenario` with the stimuli of `spec` scheduled and its bots
/// marked infected.
pub fn apply_attack(scenario: &Scenario, spec: AttackSpec) -> Result<Scenario, AttackError> {
    spec.validate(scenario)?;
    let index = scenario.attacks.len();
    let mut rng = rng::stream(scenario.seed, "attack", index as u64);
    let mut stimuli = Vec::new();

    match spec.kind {
        AttackKind::SignalingStorm | AttackKind::BotnetSignalingDdos => {
            let period = spec.ping_period();
            let jitter = match spec.kind {
                AttackKind::BotnetSignalingDdos => spec.params.jitter.unwrap_or(1.0),
                _ => 0.0,
            };
            let bytes = spec.ping_bytes();
            for &ue_id in &spec.bot_ids {
                let phase = if jitter > 0.0 { jitter * period * rng.random::<f64>() } else { 0.0 };
                for k in 0u64.. {
                    let at = spec.start + phase + k as f64 * period;
                    if at >= spec.stop {
                        break;
                    }
                    stimuli.push(ScheduledStimulus { at, ue_id, spec_index: index, action: AttackAction::Ping { bytes } });
                }
            }
        }
        AttackKind::PremiumFraud => {
            let rate = spec.params.messages_per_hour.unwrap_or(DEFAULT_FRAUD_RATE) / 3600.0;
            let peer = spec.params.premium_peer.clone().unwrap_or_else(|| DEFAULT_PREMIUM_PEER.to_string());
            for &ue_id in &spec.bot_ids {
                let mut t = spec.start;
                loop {
                    t += rng::exp_from_bits(rng.random(), rate);
                    if t >= spec.stop {
                        break;
                    }
                    stimuli.push(ScheduledStimulus {
                        at: t,
                        ue_id,
                        spec_index: index,
                        action: AttackAction::PremiumSms { peer: peer.clone() },
                    });
                }
            }
        }
    }

    let mut next = scenario.clone();
    for ue in next.ues.iter_mut().filter(|u| spec.bot_ids.contains(&u.ue_id)) {
        ue.infected = true;
    }
    next.attacks.push(spec);
    next.scheduled.extend(stimuli);
    next.scheduled.sort_by(|a, b| {
        a.at.total_cmp(&b.at).then(a.spec_index.cmp(&b.spec_index)).then(a.ue_id.cmp(&b.ue_id))
    });
    Ok(next)
}

/// Control-plane load (messages/s) of one storm bot sending pings too small
/// for DCH, each after the UE has dropped back to IDLE.
pub fn storm_signaling_rate(params: &RrcParams, ping_period: f64) -> Result<f64, AttackError> {
    if !(ping_period > params.t_fach_inactivity) {
        return Err(AttackError::PeriodTooShort { period: ping_period, t_fach: params.t_fach_inactivity });
    }
    Ok((params.promote_i2f_cost + params.demote_f2i_cost) as f64 / ping_period)
}
