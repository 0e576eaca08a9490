use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    rrc_step, station_advance, CdrEmitter, ChargingDataRecord, Dist, Message, ProfileKind, QueueStation, RrcState,
    Scenario, Service, SessionRecord, SignalingEvent, SignalingKind, SimError, Stimulus, UeState,
};
use crate::attacks::AttackAction;
use crate::rng;

/// Bytes of the closing exchange sent when a session ends.
const TEARDOWN_BYTES: u64 = 200;
/// Share of a data session flowing downstream.
const DOWNLINK_SHARE: f64 = 0.9;
/// Mobile-terminated share of MESSAGING data and voice sessions.
const MT_PROBABILITY: f64 = 0.5;
/// MESSAGING service mix: (cumulative probability, service).
const MESSAGING_MIX: [(f64, Service); 4] = [
    (0.70, Service::Data),
    (0.90, Service::Sms),
    (0.98, Service::Voice),
    (1.00, Service::PremiumSms),
];
const VOICE_HOLDING: Dist = Dist::Exp { mean: 90.0 };
const PEER_POOL: u32 = 500;
const BENIGN_PREMIUM_PEER: &str = "900100";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancySample {
    /// End of the sampling interval.
    pub t: f64,
    /// Time-average number in system over the interval.
    pub mean_occupancy: f64,
    pub arrivals: u64,
    pub completions: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationStats {
    pub station_id: String,
    pub service_rate: f64,
    /// Messages routed to this station directly from signaling events.
    pub offered: u64,
    /// All arrivals, including those forwarded by upstream stations.
    pub arrived: u64,
    pub served: u64,
    pub mean_occupancy: f64,
    /// Mean time in this station of completed messages.
    pub mean_sojourn: f64,
    pub series: Vec<OccupancySample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub seed: u64,
    pub horizon: f64,
    /// Signaling events in time order.
    pub signaling: Vec<SignalingEvent>,
    /// CDRs in emission order.
    pub cdrs: Vec<ChargingDataRecord>,
    pub station_stats: Vec<StationStats>,
    /// Control-plane messages handed to the station network.
    pub messages_offered: u64,
}

impl TraceSet {
    pub fn total_cost(&self) -> u64 {
        self.signaling.iter().map(|e| e.cost as u64).sum()
    }
}

#[derive(Clone, Debug)]
enum Action {
    Data { bytes: u64, paged: bool },
    Cdr(SessionRecord),
}

#[derive(Clone, Debug)]
struct Pending {
    at: f64,
    action: Action,
}

struct UeTrace {
    events: Vec<SignalingEvent>,
    sessions: Vec<SessionRecord>,
}

/// Runs a scenario to its horizon.
pub fn run(scenario: &Scenario) -> Result<TraceSet, SimError> {
    scenario.validate()?;

    let mut signaling = Vec::new();
    let mut sessions = Vec::new();
    for ue in &scenario.ues {
        let trace = simulate_ue(scenario, ue);
        signaling.extend(trace.events);
        sessions.extend(trace.sessions);
    }
    // Stable sorts keep UE order, then per-UE order, on ties.
    signaling.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    sessions.sort_by(|a, b| a.end_ts.total_cmp(&b.end_ts));

    let mut emitter = CdrEmitter::new(scenario.cdr_hash_key.as_bytes().to_vec(), scenario.tariffs.clone());
    let cdrs = sessions.iter().map(|s| emitter.emit(s)).collect();

    let (station_stats, messages_offered) = run_stations(scenario, &signaling)?;
    Ok(TraceSet { seed: scenario.seed, horizon: scenario.horizon, signaling, cdrs, station_stats, messages_offered })
}

fn simulate_ue(scenario: &Scenario, ue: &UeState) -> UeTrace {
    let horizon = scenario.horizon;
    let params = &scenario.rrc;
    let mut rng = rng::stream(scenario.seed, "ue", ue.ue_id.0 as u64);
    let mut pending = Vec::new();

    let profile = &ue.profile;
    let peak = profile.peak_rate();
    if peak > 0.0 {
        let mut t = 0.0;
        loop {
            t += rng::exp_from_bits(rng.random(), peak);
            if t >= horizon {
                break;
            }
            if rng.random::<f64>() * peak >= profile.rate_at(t) {
                continue;
            }
            session_stimuli(scenario, ue, t, &mut rng, &mut pending);
        }
    }

    for s in scenario.scheduled.iter().filter(|s| s.ue_id == ue.ue_id && s.at <= horizon) {
        let action = match &s.action {
            AttackAction::Ping { bytes } => Action::Data { bytes: *bytes, paged: false },
            AttackAction::PremiumSms { peer } => Action::Cdr(SessionRecord {
                ue_id: ue.ue_id,
                cell_id: ue.cell_id,
                service: Service::PremiumSms,
                start_ts: s.at,
                end_ts: s.at,
                bytes_up: 0,
                bytes_down: 0,
                messages: 1,
                peer: peer.clone(),
            }),
        };
        pending.push(Pending { at: s.at, action });
    }
    pending.sort_by(|a, b| a.at.total_cmp(&b.at));

    let mut state = ue.clone();
    let mut events = Vec::new();
    let mut sessions = Vec::new();
    let stamp = |kind, ts| SignalingEvent { ts, ue_id: ue.ue_id, kind, cell_id: ue.cell_id, cost: params.cost(kind) };
    if scenario.attach_detach {
        events.push(stamp(SignalingKind::Attach, 0.0));
    }
    for p in pending {
        match p.action {
            Action::Cdr(session) => sessions.push(session),
            Action::Data { bytes, paged } => {
                if paged {
                    let (next, mut out) = rrc_step(&state, Stimulus::TimerTick { now: p.at }, params);
                    state = next;
                    events.append(&mut out);
                    if state.rrc == RrcState::Idle {
                        events.push(stamp(SignalingKind::Paging, p.at));
                    }
                }
                let (next, mut out) = rrc_step(&state, Stimulus::DataArrival { at: p.at, bytes }, params);
                state = next;
                events.append(&mut out);
            }
        }
    }
    let (_, mut out) = rrc_step(&state, Stimulus::TimerTick { now: horizon }, params);
    events.append(&mut out);
    if scenario.attach_detach {
        events.push(stamp(SignalingKind::Detach, horizon));
    }
    UeTrace { events, sessions }
}

/// Draws one session starting at `t` and appends its stimuli.
fn session_stimuli<R: Rng>(scenario: &Scenario, ue: &UeState, t: f64, rng: &mut R, out: &mut Vec<Pending>) {
    let horizon = scenario.horizon;
    let profile = &ue.profile;
    let service = match profile.kind {
        ProfileKind::Messaging => {
            let u: f64 = rng.random();
            MESSAGING_MIX.iter().find(|(p, _)| u < *p).map_or(Service::Data, |(_, s)| *s)
        }
        _ => Service::Data,
    };
    let mt = profile.kind == ProfileKind::Messaging && rng.random::<f64>() < MT_PROBABILITY;
    let peer_id = rng.random_range(0..PEER_POOL);
    let record = |service, end: f64, up, down, peer: String| SessionRecord {
        ue_id: ue.ue_id,
        cell_id: ue.cell_id,
        service,
        start_ts: t,
        end_ts: end.min(horizon),
        bytes_up: up,
        bytes_down: down,
        messages: matches!(service, Service::Sms | Service::PremiumSms) as u32,
        peer,
    };

    match service {
        Service::Data => {
            let size = profile.session_size.sample(rng).round().max(1.0) as u64;
            let end = t + profile.think_time.sample(rng);
            let down = (size as f64 * DOWNLINK_SHARE).round() as u64;
            out.push(Pending { at: t, action: Action::Data { bytes: size, paged: mt } });
            if end > t && end <= horizon {
                out.push(Pending { at: end, action: Action::Data { bytes: TEARDOWN_BYTES, paged: false } });
            }
            let session = record(Service::Data, end, size - down + TEARDOWN_BYTES, down, format!("srv{peer_id:03}"));
            out.push(Pending { at: session.end_ts, action: Action::Cdr(session) });
        }
        Service::Voice => {
            let end = t + VOICE_HOLDING.sample(rng);
            let keepalive = scenario.rrc.t_dch_inactivity * 0.5;
            let bytes = scenario.rrc.dch_volume_threshold + 1;
            let mut at = t;
            let mut first = true;
            while at < end && at <= horizon {
                out.push(Pending { at, action: Action::Data { bytes, paged: mt && first } });
                first = false;
                at += keepalive;
            }
            let session = record(Service::Voice, end, 0, 0, format!("+4470{peer_id:05}"));
            out.push(Pending { at: session.end_ts, action: Action::Cdr(session) });
        }
        Service::Sms => {
            out.push(Pending { at: t, action: Action::Cdr(record(Service::Sms, t, 0, 0, format!("+4470{peer_id:05}"))) });
        }
        Service::PremiumSms => {
            let session = record(Service::PremiumSms, t, 0, 0, BENIGN_PREMIUM_PEER.to_string());
            out.push(Pending { at: t, action: Action::Cdr(session) });
        }
    }
}

fn run_stations(scenario: &Scenario, signaling: &[SignalingEvent]) -> Result<(Vec<StationStats>, u64), SimError> {
    let n = scenario.stations.len();
    let mut inputs: Vec<Vec<Message>> = vec![Vec::new(); n];
    let mut offered = vec![0u64; n];
    for e in signaling {
        let target = &scenario.routing[&e.kind];
        let i = scenario.station_index(target).ok_or(SimError::UnroutedEventKind(e.kind))?;
        for _ in 0..e.cost {
            inputs[i].push(Message { ts: e.ts, entered: e.ts });
        }
        offered[i] += e.cost as u64;
    }

    let mut stats: Vec<Option<StationStats>> = vec![None; n];
    for i in scenario.station_order()? {
        let spec = &scenario.stations[i];
        let mut arrivals = std::mem::take(&mut inputs[i]);
        arrivals.sort_by(|a, b| a.ts.total_cmp(&b.ts));

        let mut station = QueueStation::new(spec.id.clone(), spec.service_rate);
        let mut series = Vec::new();
        let mut completions = Vec::new();
        let mut cursor = 0;
        let mut lo = 0.0;
        while lo < scenario.horizon {
            let hi = (lo + scenario.stats_interval).min(scenario.horizon);
            let last = hi >= scenario.horizon;
            let end = cursor
                + arrivals[cursor..].partition_point(|m| if last { m.ts <= hi } else { m.ts < hi });
            let area_before = station.area_under_n;
            let (next, mut done) = station_advance(&station, &arrivals[cursor..end], hi, scenario.seed)?;
            series.push(OccupancySample {
                t: hi,
                mean_occupancy: (next.area_under_n - area_before) / (hi - lo),
                arrivals: (end - cursor) as u64,
                completions: done.len() as u64,
            });
            station = next;
            completions.append(&mut done);
            cursor = end;
            lo = hi;
        }

        let mean_sojourn = if completions.is_empty() {
            0.0
        } else {
            completions.iter().map(|c| c.sojourn()).sum::<f64>() / completions.len() as f64
        };
        if let Some(next) = &spec.next {
            let j = scenario.station_index(next).expect("validated topology");
            inputs[j].extend(completions.iter().map(|c| Message { ts: c.ts, entered: c.message.entered }));
        }
        stats[i] = Some(StationStats {
            station_id: spec.id.clone(),
            service_rate: spec.service_rate,
            offered: offered[i],
            arrived: station.arrived_count,
            served: station.served_count,
            mean_occupancy: station.mean_occupancy(),
            mean_sojourn,
            series,
        });
    }
    let total = offered.iter().sum();
    Ok((stats.into_iter().map(|s| s.expect("every station visited")).collect(), total))
}
