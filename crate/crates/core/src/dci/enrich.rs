use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::net::IpAddr;
use std::path::Path;

use ipnet::IpNet;
use serde::Deserialize;

use super::{AttackTrace, DciError, EnrichedTrace};

/// Longest-prefix-match table. Each prefix is normalised to its network
/// address; listing the same normalised prefix twice is an error.
#[derive(Clone, Debug)]
pub struct PrefixTable<T> {
    /// Per prefix length, longest first.
    levels: Vec<(u8, HashMap<IpNet, T>)>,
    len: usize,
}

impl<T> Default for PrefixTable<T> {
    fn default() -> Self {
        PrefixTable { levels: Vec::new(), len: 0 }
    }
}

impl<T: Clone> PrefixTable<T> {
    pub fn from_entries(entries: impl IntoIterator<Item = (IpNet, T)>) -> Result<Self, IpNet> {
        let mut by_len: BTreeMap<(bool, u8), HashMap<IpNet, T>> = BTreeMap::new();
        let mut len = 0;
        for (net, value) in entries {
            let net = net.trunc();
            let level = by_len.entry((net.addr().is_ipv6(), net.prefix_len())).or_default();
            if level.insert(net, value).is_some() {
                return Err(net);
            }
            len += 1;
        }
        let mut levels: Vec<(u8, HashMap<IpNet, T>)> = by_len.into_iter().map(|((_, l), m)| (l, m)).collect();
        levels.sort_by(|a, b| b.0.cmp(&a.0));
        Ok(PrefixTable { levels, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lookup(&self, ip: IpAddr) -> Option<&T> {
        let max = if ip.is_ipv4() { 32 } else { 128 };
        self.levels.iter().filter(|(l, _)| *l <= max).find_map(|(l, map)| {
            let net = IpNet::new(ip, *l).ok()?.trunc();
            map.get(&net)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct OsSignature {
    pub ttl_min: u8,
    pub ttl_max: u8,
    pub win: u32,
    pub label: String,
}

#[derive(Clone, Debug, Default)]
pub struct EnrichmentTables {
    pub geo: PrefixTable<String>,
    pub asn: PrefixTable<u32>,
    pub rdns: BTreeMap<IpAddr, String>,
    pub os_sigs: Vec<OsSignature>,
}

#[derive(Deserialize)]
struct GeoRow {
    cidr: IpNet,
    country: String,
}

#[derive(Deserialize)]
struct AsnRow {
    cidr: IpNet,
    asn: u32,
}

#[derive(Deserialize)]
struct RdnsRow {
    ip: IpAddr,
    name: String,
}

fn read_rows<T: for<'de> Deserialize<'de>>(file: &str, input: impl Read, header: &[&str]) -> Result<Vec<T>, DciError> {
    let bad = |line: usize, msg: String| DciError::MalformedTable { file: file.to_string(), line, msg };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let got = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if !got.iter().eq(header.iter().copied()) {
        return Err(bad(1, format!("header must be {}", header.join(","))));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| bad(i + 2, e.to_string())))
        .collect()
}

fn duplicate(file: &str, what: impl std::fmt::Display) -> DciError {
    DciError::MalformedTable { file: file.to_string(), line: 0, msg: format!("duplicate entry {what}") }
}

impl EnrichmentTables {
    pub fn geo_csv(input: impl Read) -> Result<PrefixTable<String>, DciError> {
        let rows: Vec<GeoRow> = read_rows("geo.csv", input, &["cidr", "country"])?;
        PrefixTable::from_entries(rows.into_iter().map(|r| (r.cidr, r.country))).map_err(|n| duplicate("geo.csv", n))
    }

    pub fn asn_csv(input: impl Read) -> Result<PrefixTable<u32>, DciError> {
        let rows: Vec<AsnRow> = read_rows("asn.csv", input, &["cidr", "asn"])?;
        PrefixTable::from_entries(rows.into_iter().map(|r| (r.cidr, r.asn))).map_err(|n| duplicate("asn.csv", n))
    }

    pub fn rdns_csv(input: impl Read) -> Result<BTreeMap<IpAddr, String>, DciError> {
        let rows: Vec<RdnsRow> = read_rows("rdns.csv", input, &["ip", "name"])?;
        let mut map = BTreeMap::new();
        for r in rows {
            if map.insert(r.ip, r.name).is_some() {
                return Err(duplicate("rdns.csv", r.ip));
            }
        }
        Ok(map)
    }

    pub fn os_sigs_csv(input: impl Read) -> Result<Vec<OsSignature>, DciError> {
        let rows: Vec<OsSignature> = read_rows("os_sigs.csv", input, &["ttl_min", "ttl_max", "win", "label"])?;
        if let Some(i) = rows.iter().position(|s| s.ttl_min > s.ttl_max) {
            return Err(DciError::MalformedTable {
                file: "os_sigs.csv".into(),
                line: i + 2,
                msg: "ttl_min exceeds ttl_max".into(),
            });
        }
        Ok(rows)
    }

    /// Loads `geo.csv`, `asn.csv`, `rdns.csv` and `os_sigs.csv` from `dir`.
    /// A missing file leaves that table empty.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DciError> {
        let dir = dir.as_ref();
        let open = |name: &str| -> Result<Option<std::fs::File>, DciError> {
            match std::fs::File::open(dir.join(name)) {
                Ok(f) => Ok(Some(f)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(DciError::StorageFailure(format!("{name}: {e}"))),
            }
        };
        let mut t = EnrichmentTables::default();
        if let Some(f) = open("geo.csv")? {
            t.geo = Self::geo_csv(f)?;
        }
        if let Some(f) = open("asn.csv")? {
            t.asn = Self::asn_csv(f)?;
        }
        if let Some(f) = open("rdns.csv")? {
            t.rdns = Self::rdns_csv(f)?;
        }
        if let Some(f) = open("os_sigs.csv")? {
            t.os_sigs = Self::os_sigs_csv(f)?;
        }
        Ok(t)
    }
}

/// First signature, in table order, whose TTL range contains `ttl` and whose
/// window size equals `win`.
pub fn fingerprint_os(tcp_meta: (u8, u32), sigs: &[OsSignature]) -> Option<&str> {
    let (ttl, win) = tcp_meta;
    sigs.iter()
        .find(|s| (s.ttl_min..=s.ttl_max).contains(&ttl) && s.win == win)
        .map(|s| s.label.as_str())
}

/// Annotates a trace from the tables. Unmatched fields stay absent and
/// `cluster_id` is left unset.
pub fn enrich(trace: &AttackTrace, tables: &EnrichmentTables) -> EnrichedTrace {
    let ip = trace.record.ip;
    EnrichedTrace {
        geo: ip.and_then(|ip| tables.geo.lookup(ip)).cloned(),
        asn: ip.and_then(|ip| tables.asn.lookup(ip)).copied(),
        rdns: ip.and_then(|ip| tables.rdns.get(&ip)).cloned(),
        os_guess: trace.record.tcp_meta().and_then(|m| fingerprint_os(m, &tables.os_sigs)).map(str::to_string),
        cluster_id: None,
        base: trace.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dci::{TraceEventKind, TraceRecord, TraceSource};

    fn trace(ip: &str, meta: Option<(u8, u32)>) -> AttackTrace {
        AttackTrace {
            trace_id: 1,
            record: TraceRecord {
                ts_ms: 0,
                source: TraceSource::Replay("r".into()),
                event_kind: TraceEventKind::Connection,
                ip: Some(ip.parse().unwrap()),
                port: Some(80),
                payload_hash: None,
                ttl: meta.map(|m| m.0),
                win: meta.map(|m| m.1),
                peer: None,
            },
        }
    }

    fn tables() -> EnrichmentTables {
        EnrichmentTables {
            geo: EnrichmentTables::geo_csv("cidr,country\n10.0.0.0/8,ZZ\n10.1.0.0/16,YY\n2001:db8::/32,QQ\n".as_bytes()).unwrap(),
            asn: EnrichmentTables::asn_csv("cidr,asn\n10.1.2.0/24,64500\n".as_bytes()).unwrap(),
            rdns: EnrichmentTables::rdns_csv("ip,name\n10.1.2.3,bot.example\n".as_bytes()).unwrap(),
            os_sigs: EnrichmentTables::os_sigs_csv(
                "ttl_min,ttl_max,win,label\n33,64,5840,unix-like\n65,128,65535,nt-like\n1,255,5840,fallback\n".as_bytes(),
            )
            .unwrap(),
        }
    }

    #[test]
    fn longest_prefix_wins() {
        let t = tables();
        assert_eq!(enrich(&trace("10.1.2.3", None), &t).geo.as_deref(), Some("YY"));
        assert_eq!(enrich(&trace("10.9.2.3", None), &t).geo.as_deref(), Some("ZZ"));
        assert_eq!(enrich(&trace("192.0.2.1", None), &t).geo, None);
        assert_eq!(enrich(&trace("2001:db8::1", None), &t).geo.as_deref(), Some("QQ"));
        let e = enrich(&trace("10.1.2.3", None), &t);
        assert_eq!((e.asn, e.rdns.as_deref()), (Some(64500), Some("bot.example")));
    }

    #[test]
    fn os_signatures_in_table_order() {
        let sigs = tables().os_sigs;
        assert_eq!(fingerprint_os((64, 5840), &sigs), Some("unix-like"));
        assert_eq!(fingerprint_os((128, 65535), &sigs), Some("nt-like"));
        assert_eq!(fingerprint_os((200, 5840), &sigs), Some("fallback"));
        assert_eq!(fingerprint_os((64, 1), &sigs), None);
    }

    #[test]
    fn idempotent() {
        let t = tables();
        let once = enrich(&trace("10.1.2.3", Some((64, 5840))), &t);
        assert_eq!(enrich(&once.base, &t), once);
    }

    #[test]
    fn bad_tables() {
        assert!(EnrichmentTables::geo_csv("cidr,country\n10.0.0.0/8,ZZ\n10.0.0.1/8,YY\n".as_bytes()).is_err());
        assert!(EnrichmentTables::geo_csv("net,country\n".as_bytes()).is_err());
        let err = EnrichmentTables::asn_csv("cidr,asn\n10.0.0.0/8,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DciError::MalformedTable { line: 2, .. }));
        assert!(EnrichmentTables::os_sigs_csv("ttl_min,ttl_max,win,label\n9,3,1,x\n".as_bytes()).is_err());
    }
}
