//! Scripted and stochastic event sequences standing in for device usage and
//! malware infections.

use std::net::{IpAddr, Ipv4Addr};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HoneypotEvent;
use crate::dci::TraceEventKind;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfectionProfile {
    /// Sends bursts of premium-rate SMS.
    PremiumDialer,
    /// Beacons to a command-and-control host and escalates privileges.
    Bot,
    /// Exfiltrates over many short connections to different hosts.
    Spyware,
}

impl InfectionProfile {
    fn label(self) -> &'static str {
        match self {
            InfectionProfile::PremiumDialer => "premium_dialer",
            InfectionProfile::Bot => "bot",
            InfectionProfile::Spyware => "spyware",
        }
    }
}

fn hex_hash(r: &mut ChaCha8Rng) -> String {
    format!("{:016x}{:016x}", r.random::<u64>(), r.random::<u64>())
}

fn remote(r: &mut ChaCha8Rng, first: u8) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(first, r.random(), r.random(), r.random_range(1..255)))
}

/// The app hash a profile installs under `seed`, usable as a signature entry.
pub fn payload_hash(profile: InfectionProfile, seed: u64) -> String {
    hex_hash(&mut rng::stream(seed, &format!("honeynode.payload.{}", profile.label()), 0))
}

/// An infection starting at `start_ms`: an app install carrying the profile's
/// payload hash followed by `steps` profile-specific actions spaced by
/// exponential gaps averaging `mean_gap_ms`.
pub fn infection_script(profile: InfectionProfile, start_ms: u64, steps: usize, mean_gap_ms: f64, seed: u64) -> Vec<HoneypotEvent> {
    let mut r = rng::stream(seed, &format!("honeynode.infection.{}", profile.label()), 0);
    let mut install = HoneypotEvent::new(start_ms, TraceEventKind::AppInstall);
    install.payload_hash = Some(payload_hash(profile, seed));
    let c2 = remote(&mut r, 203);
    let mut out = vec![install];
    let mut t = start_ms as f64;
    for _ in 0..steps {
        t += rng::exp_from_bits(r.random(), 1.0 / mean_gap_ms.max(1.0));
        let ts = t.round() as u64;
        let event = match profile {
            InfectionProfile::PremiumDialer => HoneypotEvent::sms(ts, &format!("900{:04}", r.random_range(0..10_000))),
            InfectionProfile::Bot if r.random_bool(0.7) => {
                let mut e = HoneypotEvent::connection(ts, c2, 6667);
                e.ttl = Some(64);
                e.win = Some(5840);
                e
            }
            InfectionProfile::Bot => HoneypotEvent::new(ts, TraceEventKind::SyscallBurst),
            InfectionProfile::Spyware => {
                let mut e = HoneypotEvent::connection(ts, remote(&mut r, 198), 443);
                e.ttl = Some(128);
                e.win = Some(65535);
                e
            }
        };
        out.push(event);
    }
    out
}

/// Ordinary device use between `start_ms` and `start_ms + duration_ms`:
/// Poisson events at `rate_per_s`, mostly web connections and SMS to regular
/// numbers.
pub fn benign_activity(start_ms: u64, duration_ms: u64, rate_per_s: f64, seed: u64) -> Vec<HoneypotEvent> {
    let mut r = rng::stream(seed, "honeynode.benign", 0);
    let mut out = Vec::new();
    let end = (start_ms + duration_ms) as f64;
    let mut t = start_ms as f64;
    loop {
        t += 1000.0 * rng::exp_from_bits(r.random(), rate_per_s);
        if t >= end {
            return out;
        }
        let ts = t.round() as u64;
        let u: f64 = r.random();
        let event = if u < 0.6 {
            let mut e = HoneypotEvent::connection(ts, remote(&mut r, 93), 443);
            e.ttl = Some(64);
            e.win = Some(29200);
            e
        } else if u < 0.8 {
            let mut e = HoneypotEvent::connection(ts, remote(&mut r, 151), 80);
            e.event_kind = TraceEventKind::UrlVisit;
            e
        } else if u < 0.97 {
            HoneypotEvent::sms(ts, &format!("555{:04}", r.random_range(0..10_000)))
        } else {
            HoneypotEvent::new(ts, TraceEventKind::AppInstall)
        };
        out.push(event);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dialer_sends_premium_sms() {
        let s = infection_script(InfectionProfile::PremiumDialer, 1000, 20, 500.0, 4);
        assert_eq!(s.len(), 21);
        assert_eq!(s[0].payload_hash.as_deref(), Some(payload_hash(InfectionProfile::PremiumDialer, 4).as_str()));
        assert!(s[1..].iter().all(|e| e.is_premium(&["900".into()])));
        assert!(s.windows(2).all(|w| w[0].ts_ms <= w[1].ts_ms));
        assert!(s.iter().all(|e| e.validate().is_ok()));
        assert_eq!(s, infection_script(InfectionProfile::PremiumDialer, 1000, 20, 500.0, 4));
    }

    #[test]
    fn benign_is_valid_and_premium_free() {
        let s = benign_activity(0, 600_000, 0.5, 1);
        assert!(s.len() > 200 && s.len() < 400, "{}", s.len());
        assert!(s.iter().all(|e| e.validate().is_ok() && !e.is_premium(&["900".into()])));
    }
}
