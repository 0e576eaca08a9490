use std::collections::VecDeque;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::rng;

/// A control-plane message travelling through the station network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    /// Arrival time at the current station.
    pub ts: f64,
    /// Time the message entered the network.
    pub entered: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub ts: f64,
    pub message: Message,
}

impl Completion {
    pub fn sojourn(&self) -> f64 {
        self.ts - self.message.ts
    }
}

/// Single-server FIFO station with exponential service.
///
/// Service times are drawn by random access into the station's stream: the
/// k-th service started uses draw k. Advancing in one call or in many
/// smaller steps therefore yields identical completions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueStation {
    pub station_id: String,
    pub service_rate: f64,
    /// Messages in system; the head is in service.
    pub queue: VecDeque<Message>,
    pub head_departure: Option<f64>,
    pub served_count: u64,
    pub arrived_count: u64,
    /// Integral of the number in system over time.
    pub area_under_n: f64,
    pub clock: f64,
}

impl QueueStation {
    pub fn new(station_id: impl Into<String>, service_rate: f64) -> Self {
        Self {
            station_id: station_id.into(),
            service_rate,
            queue: VecDeque::new(),
            head_departure: None,
            served_count: 0,
            arrived_count: 0,
            area_under_n: 0.0,
            clock: 0.0,
        }
    }

    pub fn in_system(&self) -> usize {
        self.queue.len()
    }

    /// Time-average number in system since t=0.
    pub fn mean_occupancy(&self) -> f64 {
        if self.clock > 0.0 {
            self.area_under_n / self.clock
        } else {
            0.0
        }
    }

    fn advance_clock(&mut self, t: f64) {
        self.area_under_n += self.queue.len() as f64 * (t - self.clock);
        self.clock = t;
    }

    fn start_service(&mut self, t: f64, draws: &mut ServiceDraws) {
        let s = draws.service_time(self.served_count, self.service_rate);
        self.head_departure = Some(t + s);
    }
}

struct ServiceDraws {
    base: rng::StreamRng,
}

impl ServiceDraws {
    fn new(seed: u64, station_id: &str) -> Self {
        Self { base: rng::stream(seed, &format!("station:{station_id}"), 0) }
    }

    fn service_time(&mut self, k: u64, rate: f64) -> f64 {
        self.base.set_word_pos(2 * k as u128);
        rng::exp_from_bits(self.base.next_u64(), rate)
    }
}

/// Advances a station to time `until`, absorbing time-ordered `arrivals`.
///
/// Departures win ties against arrivals at the same instant.
pub fn station_advance(
    station: &QueueStation,
    arrivals: &[Message],
    until: f64,
    seed: u64,
) -> Result<(QueueStation, Vec<Completion>), SimError> {
    if until < station.clock {
        return Err(SimError::InvalidParams(format!(
            "advance target {until} precedes station clock {}",
            station.clock
        )));
    }
    let mut prev = station.clock;
    for (index, m) in arrivals.iter().enumerate() {
        if m.ts < prev {
            return Err(SimError::NonMonotoneArrivals { index, ts: m.ts, clock: prev });
        }
        if m.ts > until {
            return Err(SimError::ArrivalBeyondUntil { ts: m.ts, until });
        }
        prev = m.ts;
    }

    let mut st = station.clone();
    let mut draws = ServiceDraws::new(seed, &st.station_id);
    let mut out = Vec::new();
    let mut next_arrival = 0;
    loop {
        let dep = st.head_departure.filter(|&d| d <= until);
        let arr = arrivals.get(next_arrival).map(|m| m.ts);
        match (dep, arr) {
            (Some(d), a) if a.is_none_or(|a| d <= a) => {
                st.advance_clock(d);
                let message = st.queue.pop_front().expect("busy station has a head");
                st.served_count += 1;
                out.push(Completion { ts: d, message });
                st.head_departure = None;
                if !st.queue.is_empty() {
                    st.start_service(d, &mut draws);
                }
            }
            (_, Some(a)) => {
                st.advance_clock(a);
                let mut m = arrivals[next_arrival];
                m.ts = a;
                st.queue.push_back(m);
                st.arrived_count += 1;
                next_arrival += 1;
                if st.queue.len() == 1 {
                    st.start_service(a, &mut draws);
                }
            }
            _ => break,
        }
    }
    st.advance_clock(until);
    Ok((st, out))
}
