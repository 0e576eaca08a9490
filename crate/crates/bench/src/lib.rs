//! Fixtures shared by the benchmarks.

use nemesys_core::dci::{TraceEventKind, TraceRecord, TraceSource, TraceStore};
use nemesys_core::detect::RnnModel;
use nemesys_core::netsim::ScenarioConfig;
use nemesys_core::rng;
use rand::Rng;

pub const STORM: &str = include_str!("../../../configs/storm.toml");

/// The storm scenario cut to `horizon_s`, attack window included when it fits.
pub fn storm_scenario(horizon_s: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::from_toml_str(STORM).expect("shipped config parses");
    cfg.horizon_s = horizon_s;
    cfg.attacks.retain(|a| a.stop_s <= horizon_s);
    cfg
}

/// `n` connection traces from 8 honeynodes over 256 /24 networks.
pub fn synthetic_traces(n: usize, seed: u64) -> Vec<TraceRecord> {
    let mut r = rng::stream(seed, "bench-traces", 0);
    let mut ts = 0u64;
    (0..n)
        .map(|_| {
            ts += r.random_range(0..50);
            TraceRecord {
                ts_ms: ts,
                source: TraceSource::Honeynode(format!("h{}", r.random_range(0..8))),
                event_kind: TraceEventKind::Connection,
                ip: Some([10, r.random_range(0..=255), r.random_range(0..=255), r.random_range(1..=254)].into()),
                port: Some([22, 80, 443, 8080][r.random_range(0..4)]),
                payload_hash: None,
                ttl: Some([64, 128, 255][r.random_range(0..3)]),
                win: Some(5840),
                peer: None,
            }
        })
        .collect()
}

pub fn populated_store(n: usize, seed: u64) -> TraceStore {
    let mut store = TraceStore::in_memory();
    store.ingest_batch(synthetic_traces(n, seed)).expect("synthetic traces are valid");
    store
}

/// A fully connected model over the default inputs with unit scales.
pub fn model(hidden: usize, seed: u64) -> RnnModel {
    let inputs: Vec<(&str, f64)> =
        nemesys_core::detect::RNN_FEATURES.iter().map(|&f| (f, 1.0)).collect();
    RnnModel::fully_connected(&inputs, hidden, 2, seed)
}
