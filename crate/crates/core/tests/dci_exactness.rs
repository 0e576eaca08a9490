//! Store queries against a brute-force scan, enrichment against a linear
//! longest-prefix search, and k-means against generator labels.

use std::cmp::Ordering;
use std::net::{IpAddr, Ipv4Addr};
use std::sync::OnceLock;

use ipnet::{IpNet, Ipv4Net};
use nemesys_core::dci::{
    aggregate_sources, cluster_traces, enrich, Annotation, AttackTrace, EnrichmentTables, Filter, PrefixTable,
    TraceEventKind, TraceRecord, TraceSource, TraceStore,
};
use nemesys_core::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const N: usize = 10_000;
const GEOS: [&str; 3] = ["QQ", "YY", "ZZ"];
const SOURCES: [&str; 3] = ["honeynode:h1", "honeynode:h2", "replay:crawl"];

/// What the test knows about each stored trace, kept apart from the store.
#[derive(Clone, Debug)]
struct Row {
    id: u64,
    ts: u64,
    source: &'static str,
    kind: &'static str,
    ip: Option<Ipv4Addr>,
    port: Option<u16>,
    ttl: Option<u8>,
    geo: Option<&'static str>,
    asn: Option<u32>,
}

fn synth(count: usize, seed: u64) -> Vec<(TraceRecord, Row)> {
    let mut r = rng::stream(seed, "dci-synth", 0);
    (0..count)
        .map(|i| {
            let kind = TraceEventKind::ALL[r.random_range(0..TraceEventKind::ALL.len())];
            let with_ip = kind.needs_remote() || r.random_bool(0.3);
            let ip = with_ip.then(|| Ipv4Addr::new(10, r.random_range(0..4), r.random_range(0..8), r.random()));
            let port = ip.map(|_| [22u16, 80, 443, 6667][r.random_range(0..4)]);
            let ttl = r.random_bool(0.5).then(|| [32u8, 64, 128, 255][r.random_range(0..4)]);
            let src = r.random_range(0..SOURCES.len());
            let source = match SOURCES[src].split_once(':').unwrap() {
                ("honeynode", id) => TraceSource::Honeynode(id.into()),
                (_, name) => TraceSource::Replay(name.into()),
            };
            let geo = ip.and_then(|ip| GEOS.get(ip.octets()[1] as usize).copied());
            let asn = ip.filter(|ip| ip.octets()[2] < 5).map(|ip| 64500 + u32::from(ip.octets()[2]));
            let record = TraceRecord {
                ts_ms: r.random_range(0..100_000),
                source,
                event_kind: kind,
                ip: ip.map(IpAddr::V4),
                port,
                payload_hash: r.random_bool(0.2).then(|| format!("{:08x}", r.random::<u32>())),
                ttl,
                win: ttl.map(|_| 5840),
                peer: (kind == TraceEventKind::SmsSend).then(|| format!("900{:04}", r.random_range(0..10_000))),
            };
            let row = Row {
                id: i as u64 + 1,
                ts: record.ts_ms,
                source: SOURCES[src],
                kind: kind.as_str(),
                ip,
                port,
                ttl,
                geo,
                asn,
            };
            (record, row)
        })
        .collect()
}

fn populated(count: usize, seed: u64) -> (TraceStore, Vec<Row>) {
    let data = synth(count, seed);
    let mut store = TraceStore::in_memory();
    let ids = store.ingest_batch(data.iter().map(|(r, _)| r.clone()).collect()).unwrap();
    assert_eq!(ids, (1..=count as u64).collect::<Vec<_>>());
    let rows: Vec<Row> = data.into_iter().map(|(_, row)| row).collect();
    let notes = rows
        .iter()
        .filter(|row| row.geo.is_some() || row.asn.is_some())
        .map(|row| Annotation { trace_id: row.id, geo: row.geo.map(Into::into), asn: row.asn, ..Annotation::default() })
        .collect();
    store.annotate(notes).unwrap();
    (store, rows)
}

fn fixture() -> &'static (TraceStore, Vec<Row>) {
    static STORE: OnceLock<(TraceStore, Vec<Row>)> = OnceLock::new();
    STORE.get_or_init(|| populated(N, 11))
}

#[derive(Clone, Copy, Debug)]
enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    fn text(self) -> &'static str {
        ["=", "!=", "<", "<=", ">", ">="][self as usize]
    }
}

/// Absent fields equal only `null`, differ from every concrete value, and
/// are never ordered.
fn check<T: Ord>(actual: Option<T>, cmp: Cmp, literal: Option<T>) -> bool {
    match (actual, literal) {
        (a, None) => matches!(cmp, Cmp::Eq) == a.is_none(),
        (None, Some(_)) => matches!(cmp, Cmp::Ne),
        (Some(a), Some(l)) => {
            let o = a.cmp(&l);
            match cmp {
                Cmp::Eq => o == Ordering::Equal,
                Cmp::Ne => o != Ordering::Equal,
                Cmp::Lt => o == Ordering::Less,
                Cmp::Le => o != Ordering::Greater,
                Cmp::Gt => o == Ordering::Greater,
                Cmp::Ge => o != Ordering::Less,
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Term {
    Ts(Cmp, u64),
    Kind(Cmp, &'static str),
    Source(Cmp, &'static str),
    Geo(Cmp, Option<&'static str>),
    Asn(Cmp, Option<u32>),
    Port(Cmp, u16),
    Ttl(Cmp, Option<u8>),
    Ip(Cmp, Ipv4Addr),
}

impl Term {
    fn text(&self) -> String {
        let null = |c: Cmp, v: Option<String>| format!("{}{}", c.text(), v.unwrap_or_else(|| "null".into()));
        match self {
            Term::Ts(c, v) => format!("ts_ms{}{v}", c.text()),
            Term::Kind(c, v) => format!("kind{}{v}", c.text()),
            Term::Source(c, v) => format!("source{}\"{v}\"", c.text()),
            Term::Geo(c, v) => format!("geo{}", null(*c, v.map(|g| format!("\"{g}\"")))),
            Term::Asn(c, v) => format!("asn{}", null(*c, v.map(|a| a.to_string()))),
            Term::Port(c, v) => format!("port{}{v}", c.text()),
            Term::Ttl(c, v) => format!("ttl{}", null(*c, v.map(|t| t.to_string()))),
            Term::Ip(c, v) => format!("ip{}{v}", c.text()),
        }
    }

    fn holds(&self, row: &Row) -> bool {
        match self {
            Term::Ts(c, v) => check(Some(row.ts), *c, Some(*v)),
            Term::Kind(c, v) => check(Some(row.kind), *c, Some(*v)),
            Term::Source(c, v) => check(Some(row.source), *c, Some(*v)),
            Term::Geo(c, v) => check(row.geo, *c, *v),
            Term::Asn(c, v) => check(row.asn, *c, *v),
            Term::Port(c, v) => check(row.port, *c, Some(*v)),
            Term::Ttl(c, v) => check(row.ttl, *c, *v),
            Term::Ip(c, v) => check(row.ip, *c, Some(*v)),
        }
    }
}

fn any_cmp() -> impl Strategy<Value = Cmp> {
    prop_oneof![Just(Cmp::Eq), Just(Cmp::Ne), Just(Cmp::Lt), Just(Cmp::Le), Just(Cmp::Gt), Just(Cmp::Ge)]
}

fn eq_ne() -> impl Strategy<Value = Cmp> {
    prop_oneof![Just(Cmp::Eq), Just(Cmp::Ne)]
}

/// A concrete literal with any operator, or `null` with `=`/`!=`.
fn nullable<T: Clone + std::fmt::Debug + 'static>(v: impl Strategy<Value = T> + 'static) -> BoxedStrategy<(Cmp, Option<T>)> {
    prop_oneof![(any_cmp(), v.prop_map(Some)), (eq_ne(), Just(None))].boxed()
}

fn any_term() -> impl Strategy<Value = Term> {
    let kinds = TraceEventKind::ALL.map(|k| k.as_str());
    prop_oneof![
        (any_cmp(), 0u64..100_000).prop_map(|(c, v)| Term::Ts(c, v)),
        (any_cmp(), proptest::sample::select(kinds.to_vec())).prop_map(|(c, v)| Term::Kind(c, v)),
        (any_cmp(), proptest::sample::select(SOURCES.to_vec())).prop_map(|(c, v)| Term::Source(c, v)),
        nullable(proptest::sample::select(GEOS.to_vec())).prop_map(|(c, v)| Term::Geo(c, v)),
        nullable(64498u32..64506).prop_map(|(c, v)| Term::Asn(c, v)),
        (any_cmp(), proptest::sample::select(vec![22u16, 80, 443, 1000, 6667])).prop_map(|(c, v)| Term::Port(c, v)),
        nullable(proptest::sample::select(vec![1u8, 64, 100, 128, 255])).prop_map(|(c, v)| Term::Ttl(c, v)),
        (any_cmp(), (0u8..4, 0u8..8, any::<u8>())).prop_map(|(c, (b, d, e))| Term::Ip(c, Ipv4Addr::new(10, b, d, e))),
    ]
}

fn brute_force<'a>(rows: &'a [Row], terms: &'a [Term]) -> impl Iterator<Item = u64> + 'a {
    rows.iter().filter(|row| terms.iter().all(|t| t.holds(row))).map(|row| row.id)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn query_equals_scan(terms in proptest::collection::vec(any_term(), 0..4)) {
        let (store, rows) = fixture();
        let text = terms.iter().map(Term::text).collect::<Vec<_>>().join(" ");
        let filter: Filter = text.parse().unwrap();
        let page = store.query(&filter, None, None);
        let got: Vec<u64> = page.items.iter().map(|t| t.base.trace_id).collect();
        let want: Vec<u64> = brute_force(rows, &terms).collect();
        prop_assert_eq!(got, want, "filter {}", text);
        prop_assert_eq!(page.next_after, None);
    }

    #[test]
    fn pages_concatenate_to_full_result(terms in proptest::collection::vec(any_term(), 0..3), limit in 1usize..3000) {
        let (store, rows) = fixture();
        let filter: Filter = terms.iter().map(Term::text).collect::<Vec<_>>().join(" ").parse().unwrap();
        let mut got = Vec::new();
        let mut after = None;
        loop {
            let page = store.query(&filter, Some(limit), after);
            prop_assert!(page.items.len() <= limit);
            got.extend(page.items.iter().map(|t| t.base.trace_id));
            match page.next_after {
                Some(next) => after = Some(next),
                None => break,
            }
        }
        prop_assert_eq!(got, brute_force(rows, &terms).collect::<Vec<_>>());
    }

    #[test]
    fn aggregate_is_lossless_and_ordered(
        feeds in proptest::collection::vec(proptest::collection::vec(0u64..50, 0..20), 1..5),
    ) {
        let named: Vec<(String, Vec<TraceRecord>)> = feeds
            .iter()
            .enumerate()
            .map(|(f, ts)| {
                let mut ts = ts.clone();
                ts.sort_unstable();
                let recs = ts
                    .into_iter()
                    .enumerate()
                    .map(|(i, t)| TraceRecord {
                        ts_ms: t,
                        source: TraceSource::Replay(format!("f{f}")),
                        event_kind: TraceEventKind::SyscallBurst,
                        ip: None,
                        port: None,
                        payload_hash: None,
                        ttl: None,
                        win: None,
                        peer: Some(i.to_string()),
                    })
                    .collect();
                (format!("f{f}"), recs)
            })
            .collect();
        let merged = aggregate_sources(&named).unwrap();
        prop_assert_eq!(merged.len(), feeds.iter().map(Vec::len).sum::<usize>());
        let key = |r: &TraceRecord| (r.ts_ms, r.source.to_string(), r.peer.clone().unwrap().parse::<usize>().unwrap());
        let keys: Vec<_> = merged.iter().map(key).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        prop_assert_eq!(keys, sorted);
    }

    #[test]
    fn enrichment_is_longest_prefix_and_idempotent(
        prefixes in proptest::collection::btree_set((any::<u32>(), 0u8..=32), 1..30),
        probes in proptest::collection::vec(any::<u32>(), 1..50),
    ) {
        let nets: Vec<(Ipv4Net, String)> = prefixes
            .iter()
            .map(|&(a, l)| Ipv4Net::new(Ipv4Addr::from(a), l).unwrap().trunc())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, n)| (n, format!("C{i}")))
            .collect();
        let tables = EnrichmentTables {
            geo: PrefixTable::from_entries(nets.iter().map(|(n, c)| (IpNet::V4(*n), c.clone()))).unwrap(),
            ..EnrichmentTables::default()
        };
        for p in probes {
            let ip = Ipv4Addr::from(p);
            let want = nets
                .iter()
                .filter(|(n, _)| n.contains(&ip))
                .max_by_key(|(n, _)| n.prefix_len())
                .map(|(_, c)| c.clone());
            let trace = AttackTrace {
                trace_id: 1,
                record: TraceRecord {
                    ts_ms: 0,
                    source: TraceSource::Honeynode("h".into()),
                    event_kind: TraceEventKind::Connection,
                    ip: Some(IpAddr::V4(ip)),
                    port: Some(80),
                    payload_hash: None,
                    ttl: None,
                    win: None,
                    peer: None,
                },
            };
            let once = enrich(&trace, &tables);
            prop_assert_eq!(&once.geo, &want);
            prop_assert_eq!(&once.base, &trace);
            prop_assert_eq!(enrich(&once.base, &tables), once);
        }
    }
}

#[test]
fn known_filters() {
    let (store, rows) = fixture();
    let zz = store.query(&"geo=ZZ".parse().unwrap(), None, None);
    assert_eq!(zz.items.len(), rows.iter().filter(|r| r.geo == Some("ZZ")).count());
    assert!(zz.items.windows(2).all(|w| w[0].base.trace_id < w[1].base.trace_id));
    let all = store.query(&Filter::all(), None, None);
    assert_eq!(all.items.len(), N);
    assert!(store.query(&"ts_ms>=200000".parse().unwrap(), None, None).items.is_empty());
    assert!("geo<null".parse::<Filter>().is_err());
    assert!("colour=red".parse::<Filter>().is_err());
}

#[test]
fn reopened_store_matches() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(500, 5);
    {
        let mut store = TraceStore::open(dir.path()).unwrap();
        for (rec, _) in &data[..200] {
            store.ingest(rec.clone()).unwrap();
        }
        store.ingest_batch(data[200..].iter().map(|(r, _)| r.clone()).collect()).unwrap();
        store.annotate(vec![Annotation { trace_id: 7, geo: Some("ZZ".into()), ..Annotation::default() }]).unwrap();
        store.annotate(vec![Annotation { trace_id: 7, geo: Some("YY".into()), ..Annotation::default() }]).unwrap();
    }
    let store = TraceStore::open(dir.path()).unwrap();
    assert_eq!(store.len(), 500);
    assert_eq!(store.get(7).unwrap().geo.as_deref(), Some("YY"));
    assert!(store.query(&"geo=ZZ".parse().unwrap(), None, None).items.is_empty());
    for (i, (rec, _)) in data.iter().enumerate() {
        assert_eq!(&store.get(i as u64 + 1).unwrap().base.record, rec);
    }
}

#[test]
fn rejected_records_leave_store_unchanged() {
    let mut store = TraceStore::in_memory();
    let mut bad = synth(1, 2).remove(0).0;
    bad.event_kind = TraceEventKind::Connection;
    bad.ip = None;
    bad.port = None;
    assert!(store.ingest(bad.clone()).is_err());
    let good = synth(3, 2).into_iter().map(|(r, _)| r).collect::<Vec<_>>();
    assert!(store.ingest_batch(vec![good[0].clone(), bad]).is_err());
    assert!(store.is_empty());
    assert_eq!(store.ingest(good[1].clone()).unwrap(), 1);
}

fn blobs(per: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng::stream(seed, "blobs", 0);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * per {
        let label = i % 2;
        // Unit-variance blobs whose centres are 10 apart on the first axis.
        points.push((0..dim).map(|d| if d == 0 { 10.0 * label as f64 } else { 0.0 } + noise.sample(&mut r)).collect());
        labels.push(label);
    }
    (points, labels)
}

#[test]
fn kmeans_recovers_separated_blobs() {
    for seed in 0..20 {
        let (points, labels) = blobs(200, 3, seed);
        let c = cluster_traces(&points, 2, seed).unwrap();
        let flip = c.assignments[0] != labels[0];
        assert!(
            c.assignments.iter().zip(&labels).all(|(&a, &l)| (a != l) == flip),
            "seed {seed} mislabelled a point"
        );
        assert!(c.converged);
    }
}

#[test]
fn kmeans_single_cluster_is_mean() {
    let (points, _) = blobs(50, 4, 9);
    let c = cluster_traces(&points, 1, 0).unwrap();
    for d in 0..4 {
        let mean = points.iter().map(|p| p[d]).sum::<f64>() / points.len() as f64;
        assert!((c.centroids[0][d] - mean).abs() < 1e-9);
    }
}
