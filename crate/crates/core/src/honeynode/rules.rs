//! Weighted behaviour rules.
//!
//! Rule files are CSV with header `rule_id,predicate,threshold,weight`. A rule
//! fires when its predicate's count over the window reaches `threshold`:
//!
//! | predicate            | counts                                            |
//! |----------------------|---------------------------------------------------|
//! | `premium_burst`      | `SMS_SEND` to a premium prefix                    |
//! | `sms_burst`          | any `SMS_SEND`                                    |
//! | `night_connections`  | `CONNECTION` between 00:00 and 06:00 UTC          |
//! | `app_installs`       | `APP_INSTALL`                                     |
//! | `syscall_bursts`     | `SYSCALL_BURST`                                   |
//! | `distinct_remotes`   | distinct remote IP addresses                      |
//! | `payload_events`     | events carrying a payload hash                    |
//!
//! Weights are non-negative and sum to 1.

use std::collections::BTreeSet;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{HoneyError, HoneypotEvent};
use crate::dci::TraceEventKind;

/// Slack allowed on the sum of rule weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

const DAY_MS: u64 = 86_400_000;
const HOUR_MS: u64 = 3_600_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    PremiumBurst,
    SmsBurst,
    NightConnections,
    AppInstalls,
    SyscallBursts,
    DistinctRemotes,
    PayloadEvents,
}

impl Predicate {
    const ALL: [(&'static str, Predicate); 7] = [
        ("premium_burst", Predicate::PremiumBurst),
        ("sms_burst", Predicate::SmsBurst),
        ("night_connections", Predicate::NightConnections),
        ("app_installs", Predicate::AppInstalls),
        ("syscall_bursts", Predicate::SyscallBursts),
        ("distinct_remotes", Predicate::DistinctRemotes),
        ("payload_events", Predicate::PayloadEvents),
    ];

    pub fn count(self, window: &[HoneypotEvent], premium_prefixes: &[String]) -> usize {
        let kind = |k: TraceEventKind| window.iter().filter(|e| e.event_kind == k).count();
        match self {
            Predicate::PremiumBurst => window.iter().filter(|e| e.is_premium(premium_prefixes)).count(),
            Predicate::SmsBurst => kind(TraceEventKind::SmsSend),
            Predicate::NightConnections => window
                .iter()
                .filter(|e| e.event_kind == TraceEventKind::Connection && (e.ts_ms % DAY_MS) < 6 * HOUR_MS)
                .count(),
            Predicate::AppInstalls => kind(TraceEventKind::AppInstall),
            Predicate::SyscallBursts => kind(TraceEventKind::SyscallBurst),
            Predicate::DistinctRemotes => window.iter().filter_map(|e| e.ip).collect::<BTreeSet<_>>().len(),
            Predicate::PayloadEvents => window.iter().filter(|e| e.payload_hash.is_some()).count(),
        }
    }
}

impl FromStr for Predicate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, p)| *p)
            .ok_or_else(|| format!("unknown predicate {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: String,
    pub predicate: Predicate,
    pub threshold: usize,
    pub weight: f64,
}

impl Rule {
    pub fn fires(&self, window: &[HoneypotEvent], premium_prefixes: &[String]) -> bool {
        self.predicate.count(window, premium_prefixes) >= self.threshold.max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    /// Number prefixes counted by `premium_burst`.
    pub premium_prefixes: Vec<String>,
}

#[derive(Deserialize)]
struct RuleRow {
    rule_id: String,
    predicate: String,
    threshold: usize,
    weight: f64,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>, premium_prefixes: Vec<String>) -> Result<Self, HoneyError> {
        let set = RuleSet { rules, premium_prefixes };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), HoneyError> {
        let sum: f64 = self.rules.iter().map(|r| r.weight).sum();
        if self.rules.iter().any(|r| !(r.weight >= 0.0)) || !((sum - 1.0).abs() <= WEIGHT_TOLERANCE) {
            return Err(HoneyError::BadWeights(sum));
        }
        Ok(())
    }

    pub fn from_csv(input: impl Read, premium_prefixes: Vec<String>) -> Result<Self, HoneyError> {
        let bad = |line: usize, msg: String| HoneyError::MalformedTable { file: "rules".into(), line, msg };
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = reader.headers().map_err(|e| bad(1, e.to_string()))?;
        if !header.iter().eq(["rule_id", "predicate", "threshold", "weight"]) {
            return Err(bad(1, "header must be rule_id,predicate,threshold,weight".into()));
        }
        let mut rules = Vec::new();
        for (i, row) in reader.deserialize::<RuleRow>().enumerate() {
            let row = row.map_err(|e| bad(i + 2, e.to_string()))?;
            let predicate = row.predicate.parse().map_err(|e| bad(i + 2, e))?;
            rules.push(Rule { rule_id: row.rule_id, predicate, threshold: row.threshold, weight: row.weight });
        }
        Self::new(rules, premium_prefixes)
    }
}

/// Sum of the weights of the rules that fire on `window`.
pub fn behaviour_score(window: &[HoneypotEvent], rules: &RuleSet) -> Result<f64, HoneyError> {
    rules.validate()?;
    let score: f64 = rules
        .rules
        .iter()
        .filter(|r| r.fires(window, &rules.premium_prefixes))
        .map(|r| r.weight)
        .sum();
    Ok(score.clamp(0.0, 1.0))
}
