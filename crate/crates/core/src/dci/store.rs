use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::filter::{Field, Value};
use super::{AttackTrace, DciError, EnrichedTrace, Filter, TraceEventKind, TraceRecord};

const TRACES_FILE: &str = "traces.jsonl";
const ANNOTATIONS_FILE: &str = "annotations.jsonl";

/// Enrichment fields attached to a stored trace. Later annotations of the
/// same trace replace earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub trace_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asn: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rdns: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub os_guess: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<u32>,
}

impl Annotation {
    pub fn of(t: &EnrichedTrace) -> Self {
        Annotation {
            trace_id: t.base.trace_id,
            geo: t.geo.clone(),
            asn: t.asn,
            rdns: t.rdns.clone(),
            os_guess: t.os_guess.clone(),
            cluster_id: t.cluster_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<EnrichedTrace>,
    /// Pass as `after_id` to fetch the next page; absent on the last page.
    pub next_after: Option<u64>,
}

struct Files {
    dir: PathBuf,
    traces: BufWriter<File>,
    annotations: BufWriter<File>,
}

/// Append-only trace log with in-memory indexes rebuilt on open.
///
/// Ids are assigned densely from 1, so trace `id` lives at position `id - 1`.
/// Directory-backed stores fsync before `ingest`/`annotate` return.
pub struct TraceStore {
    traces: Vec<EnrichedTrace>,
    by_ts: BTreeMap<u64, Vec<u64>>,
    by_kind: BTreeMap<TraceEventKind, Vec<u64>>,
    by_source: BTreeMap<String, Vec<u64>>,
    by_geo: BTreeMap<String, BTreeSet<u64>>,
    files: Option<Files>,
}

impl Default for TraceStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl std::fmt::Debug for TraceStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TraceStore")
            .field("len", &self.traces.len())
            .field("dir", &self.files.as_ref().map(|fs| &fs.dir))
            .finish()
    }
}

fn storage(e: impl std::fmt::Display) -> DciError {
    DciError::StorageFailure(e.to_string())
}

impl TraceStore {
    pub fn in_memory() -> Self {
        TraceStore {
            traces: Vec::new(),
            by_ts: BTreeMap::new(),
            by_kind: BTreeMap::new(),
            by_source: BTreeMap::new(),
            by_geo: BTreeMap::new(),
            files: None,
        }
    }

    /// Opens (creating if needed) a store under `dir` and replays its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, DciError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(storage)?;
        let mut store = Self::in_memory();
        let traces_path = dir.join(TRACES_FILE);
        if traces_path.exists() {
            let reader = BufReader::new(File::open(&traces_path).map_err(storage)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(storage)?;
                if line.trim().is_empty() {
                    continue;
                }
                let t: AttackTrace = serde_json::from_str(&line)
                    .map_err(|e| DciError::MalformedRecord { line: i + 1, msg: e.to_string() })?;
                if t.trace_id != store.next_id() {
                    return Err(DciError::StorageFailure(format!(
                        "{TRACES_FILE}:{}: id {} breaks the sequence",
                        i + 1,
                        t.trace_id
                    )));
                }
                store.push(t);
            }
        }
        let ann_path = dir.join(ANNOTATIONS_FILE);
        if ann_path.exists() {
            let reader = BufReader::new(File::open(&ann_path).map_err(storage)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(storage)?;
                if line.trim().is_empty() {
                    continue;
                }
                let a: Annotation = serde_json::from_str(&line)
                    .map_err(|e| DciError::MalformedRecord { line: i + 1, msg: e.to_string() })?;
                store.apply(a)?;
            }
        }
        let append = |name: &str| -> Result<BufWriter<File>, DciError> {
            let f = OpenOptions::new().create(true).append(true).open(dir.join(name)).map_err(storage)?;
            Ok(BufWriter::new(f))
        };
        store.files = Some(Files { traces: append(TRACES_FILE)?, annotations: append(ANNOTATIONS_FILE)?, dir });
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn max_id(&self) -> u64 {
        self.traces.len() as u64
    }

    fn next_id(&self) -> u64 {
        self.max_id() + 1
    }

    pub fn get(&self, id: u64) -> Option<&EnrichedTrace> {
        id.checked_sub(1).and_then(|i| self.traces.get(i as usize))
    }

    /// All traces in id order.
    pub fn iter(&self) -> impl Iterator<Item = &EnrichedTrace> {
        self.traces.iter()
    }

    fn push(&mut self, t: AttackTrace) {
        let id = t.trace_id;
        self.by_ts.entry(t.record.ts_ms).or_default().push(id);
        self.by_kind.entry(t.record.event_kind).or_default().push(id);
        self.by_source.entry(t.record.source.to_string()).or_default().push(id);
        self.traces.push(EnrichedTrace::bare(t));
    }

    fn apply(&mut self, a: Annotation) -> Result<(), DciError> {
        let idx = a.trace_id.checked_sub(1).filter(|&i| (i as usize) < self.traces.len());
        let Some(idx) = idx else { return Err(DciError::UnknownTrace(a.trace_id)) };
        let t = &mut self.traces[idx as usize];
        if let Some(old) = t.geo.take() {
            if let Some(set) = self.by_geo.get_mut(&old) {
                set.remove(&a.trace_id);
            }
        }
        if let Some(geo) = &a.geo {
            self.by_geo.entry(geo.clone()).or_default().insert(a.trace_id);
        }
        t.geo = a.geo;
        t.asn = a.asn;
        t.rdns = a.rdns;
        t.os_guess = a.os_guess;
        t.cluster_id = a.cluster_id;
        Ok(())
    }

    /// Appends one record and returns its id.
    pub fn ingest(&mut self, record: TraceRecord) -> Result<u64, DciError> {
        Ok(*self.ingest_batch(vec![record])?.first().expect("one id per record"))
    }

    /// Appends records in order with a single sync at the end. The batch is
    /// validated up front, so a schema error leaves the store untouched.
    pub fn ingest_batch(&mut self, records: Vec<TraceRecord>) -> Result<Vec<u64>, DciError> {
        for r in &records {
            r.validate()?;
        }
        let first = self.next_id();
        let traces: Vec<AttackTrace> = records
            .into_iter()
            .zip(first..)
            .map(|(record, trace_id)| AttackTrace { trace_id, record })
            .collect();
        if let Some(files) = &mut self.files {
            for t in &traces {
                serde_json::to_writer(&mut files.traces, t).map_err(storage)?;
                files.traces.write_all(b"\n").map_err(storage)?;
            }
            files.traces.flush().map_err(storage)?;
            files.traces.get_ref().sync_data().map_err(storage)?;
        }
        let ids = traces.iter().map(|t| t.trace_id).collect();
        for t in traces {
            self.push(t);
        }
        Ok(ids)
    }

    /// Records enrichment results. Base fields are never touched.
    pub fn annotate(&mut self, annotations: Vec<Annotation>) -> Result<(), DciError> {
        if let Some(a) = annotations.iter().find(|a| self.get(a.trace_id).is_none()) {
            return Err(DciError::UnknownTrace(a.trace_id));
        }
        if let Some(files) = &mut self.files {
            for a in &annotations {
                serde_json::to_writer(&mut files.annotations, a).map_err(storage)?;
                files.annotations.write_all(b"\n").map_err(storage)?;
            }
            files.annotations.flush().map_err(storage)?;
            files.annotations.get_ref().sync_data().map_err(storage)?;
        }
        for a in annotations {
            self.apply(a)?;
        }
        Ok(())
    }

    /// Ids that could match `filter`, from the narrowest usable index, in
    /// ascending order. `None` means a full scan.
    fn candidates(&self, filter: &Filter) -> Option<Vec<u64>> {
        let mut best: Option<Vec<u64>> = None;
        let mut offer = |ids: Vec<u64>| {
            if best.as_ref().is_none_or(|b| ids.len() < b.len()) {
                best = Some(ids);
            }
        };
        let (lo, hi) = filter.ts_bounds();
        if lo > hi {
            return Some(Vec::new());
        }
        if lo > 0 || hi < u64::MAX {
            let mut ids: Vec<u64> = self.by_ts.range(lo..=hi).flat_map(|(_, v)| v.iter().copied()).collect();
            ids.sort_unstable();
            offer(ids);
        }
        for v in filter.equalities(Field::EventKind) {
            let Value::Str(s) = v else { continue };
            let kind: Option<TraceEventKind> = s.parse().ok();
            offer(kind.and_then(|k| self.by_kind.get(&k)).cloned().unwrap_or_default());
        }
        for v in filter.equalities(Field::Source) {
            let Value::Str(s) = v else { continue };
            offer(self.by_source.get(s).cloned().unwrap_or_default());
        }
        for v in filter.equalities(Field::Geo) {
            let Value::Str(s) = v else { continue };
            offer(self.by_geo.get(s).map(|set| set.iter().copied().collect()).unwrap_or_default());
        }
        best
    }

    /// Traces matching `filter` with id greater than `after_id`, ascending,
    /// at most `limit` of them.
    pub fn query(&self, filter: &Filter, limit: Option<usize>, after_id: Option<u64>) -> Page {
        let after = after_id.unwrap_or(0);
        let limit = limit.unwrap_or(usize::MAX);
        let mut items = Vec::new();
        let mut more = false;
        let mut take = |t: &EnrichedTrace| {
            if items.len() == limit {
                more = true;
                return false;
            }
            items.push(t.clone());
            true
        };
        match self.candidates(filter) {
            Some(ids) => {
                let start = ids.partition_point(|&id| id <= after);
                for &id in &ids[start..] {
                    let t = &self.traces[(id - 1) as usize];
                    if filter.matches(t) && !take(t) {
                        break;
                    }
                }
            }
            None => {
                let start = (after as usize).min(self.traces.len());
                for t in &self.traces[start..] {
                    if filter.matches(t) && !take(t) {
                        break;
                    }
                }
            }
        }
        let next_after = if more { items.last().map(|t| t.base.trace_id) } else { None };
        Page { items, next_after }
    }
}
