//! Simulator output through the detector, checked against the attack
//! windows the scenario files declare.

use nemesys_core::detect::{write_alerts_jsonl, Alert, AttackClass, Detector, DetectorConfig};
use nemesys_core::features::{merge_records, Record};
use nemesys_core::netsim::{build_scenario, run, ScenarioConfig};

const STORM: &str = include_str!("../../../configs/storm.toml");
const FRAUD: &str = include_str!("../../../configs/fraud.toml");
const SCENARIO: &str = include_str!("../../../configs/scenario.toml");
const DETECTOR: &str = include_str!("../../../configs/detector.toml");

fn simulate(cfg: &ScenarioConfig) -> Vec<Record> {
    let trace = run(&build_scenario(cfg).unwrap()).unwrap();
    merge_records(&trace.signaling, &trace.cdrs)
}

fn detect(records: &[Record], until: f64) -> Vec<Alert> {
    let detector = Detector::new(DetectorConfig::from_toml_str(DETECTOR).unwrap(), None, None).unwrap();
    detector.run(records, until).unwrap().alerts
}

fn bytes(alerts: &[Alert]) -> Vec<u8> {
    let mut out = Vec::new();
    write_alerts_jsonl(&mut out, alerts).unwrap();
    out
}

#[test]
fn storm_is_flagged_soon_after_onset() {
    let cfg = ScenarioConfig::from_toml_str(STORM).unwrap();
    let onset = cfg.attacks[0].start_s;
    let alerts = detect(&simulate(&cfg), cfg.horizon_s);
    let early: Vec<_> = alerts.iter().filter(|a| a.ts <= onset).collect();
    assert!(early.is_empty(), "alerts before onset: {early:?}");
    let first = alerts.iter().find(|a| a.attack_class == AttackClass::SignalingStorm).expect("storm alert");
    assert!(first.ts <= onset + 120.0, "first storm alert at {}", first.ts);
    assert!(alerts.windows(2).all(|w| w[0].alert_id < w[1].alert_id && w[0].ts < w[1].ts));
    assert_eq!(bytes(&alerts), bytes(&detect(&simulate(&cfg), cfg.horizon_s)));
}

#[test]
fn quiet_network_raises_nothing() {
    let mut cfg = ScenarioConfig::from_toml_str(STORM).unwrap();
    cfg.attacks.clear();
    let alerts = detect(&simulate(&cfg), cfg.horizon_s);
    assert!(alerts.is_empty(), "{} false alerts, first {:?}", alerts.len(), alerts.first());
}

#[test]
fn premium_dialer_is_classified_as_fraud() {
    let cfg = ScenarioConfig::from_toml_str(FRAUD).unwrap();
    let onset = cfg.attacks[0].start_s;
    let alerts = detect(&simulate(&cfg), cfg.horizon_s);
    assert!(alerts.iter().all(|a| a.ts > onset), "alert before onset: {:?}", alerts.first());
    let fraud: Vec<_> = alerts.iter().filter(|a| a.attack_class == AttackClass::PremiumFraud).collect();
    assert!(!fraud.is_empty(), "classes seen: {:?}", alerts.iter().map(|a| a.attack_class).collect::<Vec<_>>());
    assert!(fraud[0].ts <= onset + 300.0, "first fraud alert at {}", fraud[0].ts);
    assert!(!alerts.iter().any(|a| a.attack_class == AttackClass::SignalingStorm));
}

#[test]
fn reference_scenario_runs() {
    let mut cfg = ScenarioConfig::from_toml_str(SCENARIO).unwrap();
    cfg.horizon_s = 600.0;
    let records = simulate(&cfg);
    assert!(!records.is_empty());
    assert!(records.windows(2).all(|w| w[0].ts() <= w[1].ts()));
}
