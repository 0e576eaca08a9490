use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::Sha256;

use super::{CellId, UeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Service {
    Voice,
    Data,
    Sms,
    PremiumSms,
}

impl Service {
    pub fn as_str(self) -> &'static str {
        match self {
            Service::Voice => "VOICE",
            Service::Data => "DATA",
            Service::Sms => "SMS",
            Service::PremiumSms => "PREMIUM_SMS",
        }
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Service {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "VOICE" => Ok(Service::Voice),
            "DATA" => Ok(Service::Data),
            "SMS" => Ok(Service::Sms),
            "PREMIUM_SMS" => Ok(Service::PremiumSms),
            _ => Err(format!("unknown service {s:?}")),
        }
    }
}

/// Non-negative decimal charge with three fractional digits, stored in
/// thousandths so sums are exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(into = "String")]
pub struct ChargeUnits(pub u64);

impl ChargeUnits {
    pub const ZERO: ChargeUnits = ChargeUnits(0);

    pub fn from_units(units: f64) -> Option<Self> {
        (units.is_finite() && units >= 0.0).then(|| ChargeUnits((units * 1000.0).round() as u64))
    }

    pub fn milli(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for ChargeUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

impl FromStr for ChargeUnits {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad charge {s:?}");
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 3 || int.is_empty() {
            return Err(bad());
        }
        let int: u64 = int.parse().map_err(|_| bad())?;
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<3}").parse().map_err(|_| bad())?
        };
        Ok(ChargeUnits(int * 1000 + frac))
    }
}

impl From<ChargeUnits> for String {
    fn from(c: ChargeUnits) -> String {
        c.to_string()
    }
}

impl<'de> Deserialize<'de> for ChargeUnits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => ChargeUnits::from_units(x).ok_or_else(|| serde::de::Error::custom("negative charge")),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Per-service tariffs. Voice is charged per started second, data per
/// started KiB, SMS per message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TariffTable {
    pub voice_per_s: ChargeUnits,
    pub data_per_kib: ChargeUnits,
    pub sms_per_msg: ChargeUnits,
    pub premium_sms_per_msg: ChargeUnits,
}

impl Default for TariffTable {
    fn default() -> Self {
        Self {
            voice_per_s: ChargeUnits(5),
            data_per_kib: ChargeUnits(1),
            sms_per_msg: ChargeUnits(100),
            premium_sms_per_msg: ChargeUnits(10_000),
        }
    }
}

impl TariffTable {
    pub fn charge(&self, session: &SessionRecord) -> ChargeUnits {
        let milli = match session.service {
            Service::Voice => self.voice_per_s.0 * session.duration().ceil() as u64,
            Service::Data => self.data_per_kib.0 * (session.bytes_up + session.bytes_down).div_ceil(1024),
            Service::Sms => self.sms_per_msg.0 * session.messages as u64,
            Service::PremiumSms => self.premium_sms_per_msg.0 * session.messages as u64,
        };
        ChargeUnits(milli)
    }
}

/// A closed session as seen by the billing system, before anonymisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub ue_id: UeId,
    pub cell_id: CellId,
    pub service: Service,
    pub start_ts: f64,
    pub end_ts: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub messages: u32,
    pub peer: String,
}

impl SessionRecord {
    pub fn duration(&self) -> f64 {
        (self.end_ts - self.start_ts).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargingDataRecord {
    pub record_id: u64,
    /// Keyed hash of the subscriber id.
    pub ue_id: String,
    pub service: Service,
    pub start_ts: f64,
    pub duration: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub peer: String,
    pub charge_units: ChargeUnits,
    pub cell_id: CellId,
}

impl ChargingDataRecord {
    /// Time the record leaves the billing system (session close).
    pub fn emitted_at(&self) -> f64 {
        self.start_ts + self.duration
    }
}

/// HMAC-SHA256 of the UE id under `key`, truncated to 96 bits, hex encoded.
pub fn anonymize(key: &[u8], ue: UeId) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(ue.to_string().as_bytes());
    let tag = mac.finalize().into_bytes();
    tag[..12].iter().map(|b| format!("{b:02x}")).collect()
}

/// Turns closed sessions into CDRs with strictly increasing record ids.
#[derive(Clone, Debug)]
pub struct CdrEmitter {
    key: Vec<u8>,
    tariffs: TariffTable,
    next_id: u64,
}

impl CdrEmitter {
    pub fn new(key: impl Into<Vec<u8>>, tariffs: TariffTable) -> Self {
        Self { key: key.into(), tariffs, next_id: 1 }
    }

    pub fn emit(&mut self, session: &SessionRecord) -> ChargingDataRecord {
        let record_id = self.next_id;
        self.next_id += 1;
        ChargingDataRecord {
            record_id,
            ue_id: anonymize(&self.key, session.ue_id),
            service: session.service,
            start_ts: session.start_ts,
            duration: session.duration(),
            bytes_up: session.bytes_up,
            bytes_down: session.bytes_down,
            peer: session.peer.clone(),
            charge_units: self.tariffs.charge(session),
            cell_id: session.cell_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(service: Service, duration: f64, bytes: u64, messages: u32) -> SessionRecord {
        SessionRecord {
            ue_id: UeId(7),
            cell_id: CellId(0),
            service,
            start_ts: 100.0,
            end_ts: 100.0 + duration,
            bytes_up: 0,
            bytes_down: bytes,
            messages,
            peer: "peer".into(),
        }
    }

    #[test]
    fn empty_data_session_is_free() {
        let mut em = CdrEmitter::new(b"k".to_vec(), TariffTable::default());
        let cdr = em.emit(&session(Service::Data, 0.0, 0, 0));
        assert_eq!(cdr.charge_units, ChargeUnits::ZERO);
        assert_eq!(cdr.duration, 0.0);
    }

    #[test]
    fn same_key_same_subscriber_same_alias() {
        let mut em = CdrEmitter::new(b"key".to_vec(), TariffTable::default());
        let a = em.emit(&session(Service::Sms, 0.0, 0, 1));
        let b = em.emit(&session(Service::Data, 3.0, 5000, 0));
        assert_eq!(a.ue_id, b.ue_id);
        assert!(b.record_id > a.record_id);
        assert_ne!(anonymize(b"other", UeId(7)), a.ue_id);
        assert_ne!(anonymize(b"key", UeId(8)), a.ue_id);
    }

    #[test]
    fn premium_sms_charges_per_message() {
        let mut em = CdrEmitter::new(b"k".to_vec(), TariffTable::default());
        let cdr = em.emit(&session(Service::PremiumSms, 0.0, 0, 3));
        assert_eq!(cdr.charge_units.to_string(), "30.000");
    }

    #[test]
    fn charge_units_parse_and_print() {
        for s in ["0.000", "30.000", "1.005", "12.340"] {
            assert_eq!(s.parse::<ChargeUnits>().unwrap().to_string(), s);
        }
        assert_eq!("2.5".parse::<ChargeUnits>().unwrap(), ChargeUnits(2500));
        assert!("1.0001".parse::<ChargeUnits>().is_err());
        assert!("-1".parse::<ChargeUnits>().is_err());
    }

    #[test]
    fn voice_and_data_round_usage_up() {
        let t = TariffTable::default();
        assert_eq!(t.charge(&session(Service::Voice, 2.1, 0, 0)), ChargeUnits(15));
        assert_eq!(t.charge(&session(Service::Data, 1.0, 1025, 0)), ChargeUnits(2));
    }
}
