//! Scenario-level properties of the simulator and the attack injector.

use std::collections::BTreeSet;

use nemesys_core::attacks::{apply_attack, storm_signaling_rate, AttackKind, AttackParams, AttackSpec};
use nemesys_core::netsim::{
    build_scenario, run, write_cdr_csv, write_events_jsonl, RrcParams, Scenario, ScenarioConfig, Service,
    SignalingKind, UeGroupConfig, UeId,
};

fn config(groups: Vec<UeGroupConfig>, horizon: f64, seed: u64) -> ScenarioConfig {
    ScenarioConfig { seed, horizon_s: horizon, ue_groups: groups, attach_detach: false, ..ScenarioConfig::default() }
}

fn group(count: u32, profile: &str, session_rate: Option<f64>) -> UeGroupConfig {
    UeGroupConfig { count, profile: profile.into(), profile_seed: None, session_rate }
}

fn flatten_diurnal(s: &mut Scenario) {
    for ue in &mut s.ues {
        ue.profile.diurnal_shape = vec![1.0; 24];
    }
}

fn per_ue_count(s: &Scenario, kind: SignalingKind) -> f64 {
    let trace = run(s).unwrap();
    trace.signaling.iter().filter(|e| e.kind == kind).count() as f64 / s.ues.len() as f64
}

#[test]
fn web_promotions_track_session_rate() {
    let mut s = build_scenario(&config(vec![group(100, "WEB", None)], 3600.0, 21)).unwrap();
    flatten_diurnal(&mut s);
    let expected = s.ues[0].profile.session_rate * 1.0;
    let got = per_ue_count(&s, SignalingKind::PromoteI2F);
    assert!((got - expected).abs() <= 0.2 * expected, "I2F/UE = {got}, expected {expected}");
}

#[test]
fn web_promotions_follow_diurnal_weights() {
    // Hours 9..12 of the default shape, integrated independently.
    let cfg = config(vec![group(100, "WEB", None)], 12.0 * 3600.0, 4);
    let s = build_scenario(&cfg).unwrap();
    let p = &s.ues[0].profile;
    let expected: f64 = p.diurnal_shape[..12].iter().map(|w| p.session_rate * w).sum();
    let got = per_ue_count(&s, SignalingKind::PromoteI2F);
    assert!((got - expected).abs() <= 0.2 * expected, "I2F/UE = {got}, expected {expected}");
}

#[test]
fn storm_rate_matches_closed_form() {
    let period = 15.0;
    let cycles = 10_000.0;
    let horizon = period * cycles + 100.0;
    let base = build_scenario(&config(vec![group(1, "IDLE_HEAVY", Some(0.0))], horizon, 2)).unwrap();
    let spec = AttackSpec {
        kind: AttackKind::SignalingStorm,
        start: 0.0,
        stop: period * cycles,
        bot_ids: BTreeSet::from([UeId(0)]),
        params: AttackParams { ping_period: Some(period), ..AttackParams::default() },
    };
    let s = apply_attack(&base, spec).unwrap();
    let trace = run(&s).unwrap();
    let bot: Vec<_> = trace.signaling.iter().filter(|e| e.ue_id == UeId(0) && e.ts < period * cycles).collect();
    let measured = bot.iter().map(|e| e.cost as f64).sum::<f64>() / (period * cycles);

    let rrc = RrcParams::default();
    let closed_form = (rrc.cost(SignalingKind::PromoteI2F) + rrc.cost(SignalingKind::DemoteF2I)) as f64 / period;
    assert!((closed_form - 1.0 / 3.0).abs() < 1e-12);
    assert!((measured - closed_form).abs() <= 0.02 * closed_form, "measured {measured}");
    assert_eq!(storm_signaling_rate(&rrc, period).unwrap(), closed_form);

    let kinds: Vec<SignalingKind> = trace.signaling.iter().filter(|e| e.ue_id == UeId(0)).map(|e| e.kind).collect();
    assert!(kinds.iter().all(|k| matches!(k, SignalingKind::PromoteI2F | SignalingKind::DemoteF2I)));
    assert!(kinds.chunks(2).all(|c| c[0] == SignalingKind::PromoteI2F && c.get(1).is_none_or(|k| *k == SignalingKind::DemoteF2I)));
}

#[test]
fn fraud_volume_matches_rate_on_average() {
    let runs = 100;
    let rate = 60.0;
    let mut total = 0usize;
    for seed in 0..runs {
        let base = build_scenario(&config(vec![group(1, "WEB", None)], 3600.0, seed)).unwrap();
        let spec = AttackSpec {
            kind: AttackKind::PremiumFraud,
            start: 0.0,
            stop: 3600.0,
            bot_ids: BTreeSet::from([UeId(0)]),
            params: AttackParams { messages_per_hour: Some(rate), ..AttackParams::default() },
        };
        let trace = run(&apply_attack(&base, spec).unwrap()).unwrap();
        total += trace.cdrs.iter().filter(|c| c.service == Service::PremiumSms).count();
    }
    let mean = total as f64 / runs as f64;
    // Four standard errors of a Poisson(60) mean over 100 runs.
    let tol = 4.0 * (rate / runs as f64).sqrt();
    assert!((mean - rate).abs() <= tol, "mean premium CDRs {mean}");
}

fn serialise(s: &Scenario) -> (Vec<u8>, Vec<u8>) {
    let trace = run(s).unwrap();
    let mut events = Vec::new();
    let mut cdrs = Vec::new();
    write_events_jsonl(&mut events, &trace.signaling).unwrap();
    write_cdr_csv(&mut cdrs, &trace.cdrs).unwrap();
    (events, cdrs)
}

#[test]
fn removing_attacks_restores_baseline() {
    let mut cfg = config(vec![group(40, "MESSAGING", None), group(10, "IDLE_HEAVY", None)], 1800.0, 9);
    cfg.attach_detach = true;
    let baseline = build_scenario(&cfg).unwrap();
    cfg.attacks = vec![nemesys_core::netsim::AttackConfig {
        kind: AttackKind::SignalingStorm,
        start_s: 600.0,
        stop_s: 1200.0,
        bot_ids: vec![],
        bot_group: Some(1),
        params: AttackParams::default(),
    }];
    let attacked = build_scenario(&cfg).unwrap();
    assert_ne!(serialise(&attacked).0, serialise(&baseline).0);

    let mut stripped = attacked.clone();
    stripped.attacks.clear();
    stripped.scheduled.clear();
    for ue in &mut stripped.ues {
        ue.infected = false;
    }
    assert_eq!(stripped, baseline);
    assert_eq!(serialise(&stripped), serialise(&baseline));

    // Non-bot UEs see exactly the same signaling with or without the attack.
    let bots: BTreeSet<UeId> = attacked.attacks[0].bot_ids.clone();
    let clean = |s: &Scenario| -> Vec<_> { run(s).unwrap().signaling.into_iter().filter(|e| !bots.contains(&e.ue_id)).collect() };
    assert_eq!(clean(&attacked), clean(&baseline));
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let cfg = ScenarioConfig::from_toml_str(include_str!("../../../configs/storm.toml")).unwrap();
    let a = serialise(&build_scenario(&cfg).unwrap());
    let b = serialise(&build_scenario(&cfg).unwrap());
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(serialise(&build_scenario(&other).unwrap()).0, a.0);
}

#[test]
fn no_single_step_idle_dch_transitions_and_costs_balance() {
    let cfg = config(vec![group(30, "STREAMING", None), group(30, "MESSAGING", None)], 3600.0, 13);
    let s = build_scenario(&cfg).unwrap();
    let trace = run(&s).unwrap();
    assert_eq!(trace.total_cost(), trace.messages_offered);
    for ue in &s.ues {
        let mut dch = false;
        let mut connected = false;
        for e in trace.signaling.iter().filter(|e| e.ue_id == ue.ue_id) {
            match e.kind {
                SignalingKind::PromoteI2F => {
                    assert!(!connected, "I2F while connected");
                    connected = true;
                }
                SignalingKind::PromoteF2D => {
                    assert!(connected && !dch, "F2D from IDLE or DCH");
                    dch = true;
                }
                SignalingKind::DemoteD2F => {
                    assert!(dch);
                    dch = false;
                }
                SignalingKind::DemoteF2I => {
                    assert!(connected && !dch, "F2I from DCH");
                    connected = false;
                }
                _ => {}
            }
        }
    }
}
