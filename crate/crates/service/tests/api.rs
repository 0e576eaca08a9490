//! The route table exercised over real HTTP.

use std::time::Duration;

use futures::StreamExt;
use nemesys_core::dci::{Page, TraceEventKind, TraceRecord, TraceSource, TraceStore};
use nemesys_core::detect::{Alert, AttackClass, DetectorConfig};
use nemesys_core::netsim::ScenarioConfig;
use nemesys_core::Scope;
use nemesys_service::{serve, AppState, NetworkStats, RunInfo, RunStatus, ServiceConfig};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

const STORM: &str = include_str!("../../../configs/storm.toml");
const DETECTOR: &str = include_str!("../../../configs/detector.toml");

struct Server {
    base: String,
    state: AppState,
    stop: Option<oneshot::Sender<()>>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(store: TraceStore) -> Self {
        let scenario = ScenarioConfig::from_toml_str(STORM).unwrap();
        let detector = DetectorConfig::from_toml_str(DETECTOR).unwrap();
        let state = AppState::new(ServiceConfig::default(), scenario, detector, store);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let handle = tokio::spawn(serve(listener, state.clone(), async {
            let _ = rx.await;
        }));
        Server { base, state, stop: Some(tx), handle }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn get(&self, path: &str) -> reqwest::Response {
        reqwest::get(self.url(path)).await.unwrap()
    }

    async fn post(&self, path: &str, body: Value) -> reqwest::Response {
        reqwest::Client::new().post(self.url(path)).json(&body).send().await.unwrap()
    }

    async fn stop(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        tokio::time::timeout(Duration::from_secs(10), self.handle).await.expect("bounded shutdown").unwrap().unwrap();
    }
}

fn storm_json(attacks: bool) -> Value {
    let mut cfg = ScenarioConfig::from_toml_str(STORM).unwrap();
    if !attacks {
        cfg.attacks.clear();
    }
    serde_json::to_value(cfg).unwrap()
}

fn alert(ts: f64) -> Alert {
    Alert {
        alert_id: 0,
        ts,
        scope: Scope::Network,
        attack_class: AttackClass::PremiumFraud,
        confidence: 0.5,
        contributing: vec![],
        acked: false,
    }
}

#[tokio::test]
async fn empty_store_lists_no_alerts() {
    let srv = Server::start(TraceStore::in_memory()).await;
    let res = srv.get("/api/v1/alerts?since=0").await;
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(res.text().await.unwrap(), "[]");
    assert_eq!(srv.get("/api/v1/alerts?since=x").await.status(), StatusCode::BAD_REQUEST);
    assert_eq!(srv.get("/api/v1/alerts?class=NOPE").await.status(), StatusCode::BAD_REQUEST);
    assert_eq!(srv.get("/api/v1/stats/network").await.status(), StatusCode::NOT_FOUND);
    srv.stop().await;
}

#[tokio::test]
async fn storm_run_end_to_end() {
    let srv = Server::start(TraceStore::in_memory()).await;

    let res = srv.post("/api/v1/sim/run", json!({ "scenario": storm_json(false), "start": false })).await;
    assert_eq!(res.status(), StatusCode::CREATED);
    let run: RunInfo = res.json().await.unwrap();
    assert_eq!(run.status, RunStatus::Idle);

    let late = json!({ "run_id": run.run_id, "attack": {
        "kind": "SIGNALING_STORM", "start_s": 1000.0, "stop_s": 2500.0, "bot_group": 1 } });
    let res = srv.post("/api/v1/sim/attack", late).await;
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    let err: Value = res.json().await.unwrap();
    assert_eq!(err["error"], "WindowOutOfHorizon");

    let missing = json!({ "run_id": "r999", "attack": { "kind": "SIGNALING_STORM", "start_s": 1.0, "stop_s": 2.0 } });
    assert_eq!(srv.post("/api/v1/sim/attack", missing).await.status(), StatusCode::NOT_FOUND);

    let storm = json!({ "run_id": run.run_id, "attack": {
        "kind": "SIGNALING_STORM", "start_s": 1000.0, "stop_s": 2000.0, "bot_group": 1 } });
    let res = srv.post("/api/v1/sim/attack", storm.clone()).await;
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(res.json::<RunInfo>().await.unwrap().attacks.len(), 1);

    let res = srv.post("/api/v1/sim/run", json!({ "run_id": run.run_id, "wait": true })).await;
    assert_eq!(res.status(), StatusCode::OK);
    let done: RunInfo = res.json().await.unwrap();
    assert_eq!(done.status, RunStatus::Done);
    assert_eq!(done.error, None);

    let alerts: Vec<Alert> = srv.get("/api/v1/alerts").await.json().await.unwrap();
    assert!(alerts.iter().any(|a| a.attack_class == AttackClass::SignalingStorm));
    assert!(alerts.iter().all(|a| a.ts > 1000.0));
    assert_eq!(alerts.iter().map(|a| a.alert_id).collect::<Vec<_>>(), done.alert_ids);

    let storms: Vec<Alert> = srv.get("/api/v1/alerts?class=SIGNALING_STORM").await.json().await.unwrap();
    assert!(!storms.is_empty() && storms.iter().all(|a| a.attack_class == AttackClass::SignalingStorm));
    let tail: Vec<Alert> = srv.get(&format!("/api/v1/alerts?since={}", alerts[0].alert_id)).await.json().await.unwrap();
    assert_eq!(tail.len(), alerts.len() - 1);

    assert_eq!(srv.post("/api/v1/sim/attack", storm).await.status(), StatusCode::CONFLICT);
    let again = json!({ "run_id": run.run_id });
    assert_eq!(srv.post("/api/v1/sim/run", again).await.status(), StatusCode::CONFLICT);

    let stats: NetworkStats = srv.get("/api/v1/stats/network").await.json().await.unwrap();
    assert_eq!(stats.run_id, run.run_id);
    assert_eq!(stats.timeline.len(), 200);
    assert!(stats.messages_offered > 0);
    let by_id = srv.get(&format!("/api/v1/stats/network?run_id={}", run.run_id)).await.text().await.unwrap();
    assert_eq!(by_id, srv.get("/api/v1/stats/network").await.text().await.unwrap());
    assert_eq!(srv.get("/api/v1/stats/network?run_id=r42").await.status(), StatusCode::NOT_FOUND);

    let runs: Vec<RunInfo> = srv.get("/api/v1/sim/runs").await.json().await.unwrap();
    assert_eq!(runs, vec![done]);
    srv.stop().await;
}

#[tokio::test]
async fn background_run_reaches_done() {
    let srv = Server::start(TraceStore::in_memory()).await;
    let mut cfg = ScenarioConfig::from_toml_str(STORM).unwrap();
    cfg.horizon_s = 300.0;
    cfg.attacks.clear();
    let res = srv.post("/api/v1/sim/run", json!({ "scenario": cfg, "seed": 3 })).await;
    assert_eq!(res.status(), StatusCode::ACCEPTED);
    let run: RunInfo = res.json().await.unwrap();
    assert_eq!(run.seed, 3);
    for _ in 0..200 {
        let runs: Vec<RunInfo> = srv.get("/api/v1/sim/runs").await.json().await.unwrap();
        if runs[0].status == RunStatus::Done {
            srv.stop().await;
            return;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("run never finished");
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let srv = Server::start(TraceStore::in_memory()).await;
    let mut bad = storm_json(false);
    bad["ue_groups"][0]["profile"] = json!("GAMER");
    let res = srv.post("/api/v1/sim/run", json!({ "scenario": bad })).await;
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    assert_eq!(res.json::<Value>().await.unwrap()["error"], "UnknownProfileKind");
    assert_eq!(srv.post("/api/v1/sim/run", json!({ "colour": 1 })).await.status(), StatusCode::BAD_REQUEST);
    assert_eq!(srv.post("/api/v1/sim/run", json!({ "run_id": "r7" })).await.status(), StatusCode::NOT_FOUND);
    srv.stop().await;
}

#[tokio::test]
async fn ack_round_trip() {
    let srv = Server::start(TraceStore::in_memory()).await;
    srv.state.publish(vec![alert(10.0), alert(20.0)]);

    let res = srv.post("/api/v1/alerts/2/ack", json!({})).await;
    assert_eq!(res.status(), StatusCode::OK);
    assert!(res.json::<Alert>().await.unwrap().acked);
    let twice = srv.post("/api/v1/alerts/2/ack", json!({})).await;
    assert_eq!(twice.status(), StatusCode::OK);

    let acked: Vec<Alert> = srv.get("/api/v1/alerts?acked=true").await.json().await.unwrap();
    assert_eq!(acked.iter().map(|a| a.alert_id).collect::<Vec<_>>(), vec![2]);
    let open: Vec<Alert> = srv.get("/api/v1/alerts?acked=false").await.json().await.unwrap();
    assert_eq!(open.iter().map(|a| a.alert_id).collect::<Vec<_>>(), vec![1]);

    assert_eq!(srv.post("/api/v1/alerts/3/ack", json!({})).await.status(), StatusCode::NOT_FOUND);
    assert_eq!(srv.post("/api/v1/alerts/0/ack", json!({})).await.status(), StatusCode::NOT_FOUND);
    assert_eq!(srv.post("/api/v1/alerts/abc/ack", json!({})).await.status(), StatusCode::BAD_REQUEST);
    srv.stop().await;
}

#[tokio::test]
async fn traces_paginate_and_filter() {
    let mut store = TraceStore::in_memory();
    let records: Vec<TraceRecord> = (0..250u64)
        .map(|i| TraceRecord {
            ts_ms: i * 10,
            source: TraceSource::Honeynode(if i % 2 == 0 { "h1" } else { "h2" }.into()),
            event_kind: TraceEventKind::Connection,
            ip: Some([10, 0, (i / 256) as u8, (i % 256) as u8].into()),
            port: Some(443),
            payload_hash: None,
            ttl: None,
            win: None,
            peer: None,
        })
        .collect();
    store.ingest_batch(records).unwrap();
    let srv = Server::start(store).await;

    let mut ids = Vec::new();
    let mut path = "/api/v1/traces?filter=source%3D%22honeynode%3Ah1%22&limit=40".to_string();
    loop {
        let page: Page = srv.get(&path).await.json().await.unwrap();
        assert!(page.items.len() <= 40);
        ids.extend(page.items.iter().map(|t| t.base.trace_id));
        match page.next_after {
            Some(after) => path = format!("/api/v1/traces?filter=source%3D%22honeynode%3Ah1%22&limit=40&after_id={after}"),
            None => break,
        }
    }
    assert_eq!(ids, (1..=250).step_by(2).collect::<Vec<u64>>());

    let first = srv.get("/api/v1/traces").await.text().await.unwrap();
    assert_eq!(first, srv.get("/api/v1/traces").await.text().await.unwrap());
    let page: Page = serde_json::from_str(&first).unwrap();
    assert_eq!(page.items.len(), 100);

    let res = srv.get("/api/v1/traces?filter=colour%3Dred").await;
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    assert_eq!(res.json::<Value>().await.unwrap()["error"], "MalformedFilter");
    assert_eq!(srv.get("/api/v1/traces?limit=0").await.status(), StatusCode::BAD_REQUEST);
    srv.stop().await;
}

/// Reads server-sent events until `n` alert ids have arrived.
async fn read_ids(res: reqwest::Response, n: usize) -> Vec<u64> {
    let mut body = res.bytes_stream();
    let mut buf = String::new();
    let mut ids = Vec::new();
    while ids.len() < n {
        let chunk = tokio::time::timeout(Duration::from_secs(10), body.next()).await.expect("stream stalled");
        buf.push_str(std::str::from_utf8(&chunk.unwrap().unwrap()).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            let data = frame.lines().find_map(|l| l.strip_prefix("data:")).map(str::trim);
            if let Some(data) = data {
                let a: Alert = serde_json::from_str(data).unwrap();
                let id = frame.lines().find_map(|l| l.strip_prefix("id:")).unwrap().trim().parse().unwrap();
                assert_eq!(a.alert_id, id);
                ids.push(id);
            }
        }
    }
    ids
}

async fn wait_for_subscribers(state: &AppState, n: usize) {
    for _ in 0..200 {
        if state.hub().subscriber_count() >= n {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("subscribers never connected");
}

#[tokio::test]
async fn stream_fans_out_in_order() {
    let srv = Server::start(TraceStore::in_memory()).await;
    let a = srv.get("/api/v1/stream").await;
    let b = srv.get("/api/v1/stream").await;
    assert_eq!(a.headers()["content-type"], "text/event-stream");
    wait_for_subscribers(&srv.state, 2).await;
    srv.state.publish(vec![alert(1.0), alert(2.0), alert(3.0)]);
    assert_eq!(read_ids(a, 3).await, vec![1, 2, 3]);
    assert_eq!(read_ids(b, 3).await, vec![1, 2, 3]);
    srv.stop().await;
}

#[tokio::test]
async fn late_subscriber_gets_replay_then_live() {
    let srv = Server::start(TraceStore::in_memory()).await;
    srv.state.publish((0..150).map(|i| alert(i as f64)).collect());
    let late = srv.get("/api/v1/stream").await;
    wait_for_subscribers(&srv.state, 1).await;
    srv.state.publish(vec![alert(200.0)]);
    assert_eq!(read_ids(late, 101).await, (51..=151).collect::<Vec<u64>>());

    let resumed = reqwest::Client::new()
        .get(srv.url("/api/v1/stream"))
        .header("Last-Event-ID", "149")
        .send()
        .await
        .unwrap();
    assert_eq!(read_ids(resumed, 2).await, vec![150, 151]);
    srv.stop().await;
}

#[tokio::test]
async fn shutdown_closes_open_streams() {
    let srv = Server::start(TraceStore::in_memory()).await;
    let open = srv.get("/api/v1/stream").await;
    wait_for_subscribers(&srv.state, 1).await;
    srv.stop().await;
    // Either a clean end of body or a reset connection; hanging is the failure.
    tokio::time::timeout(Duration::from_secs(5), open.bytes()).await.expect("stream still open after shutdown").ok();
}
