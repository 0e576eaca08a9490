use std::path::PathBuf;

use clap::{Args, Subcommand};
use nemesys_core::dci::{
    cluster_traces, enrich as enrich_trace, read_traces_jsonl, trace_vector, Annotation, EnrichmentTables, Filter,
    TraceStore,
};
use serde::Serialize;

use crate::{emit, read_bytes, to_json_line, CliError};

#[derive(Debug, Args)]
pub struct StoreArg {
    /// Trace store directory.
    #[arg(long, env = "NEMESYS_STORE", default_value = "dci-store")]
    pub store: PathBuf,
}

impl StoreArg {
    fn open(&self) -> Result<TraceStore, CliError> {
        Ok(TraceStore::open(&self.store)?)
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Traces in JSON lines.
    pub file: PathBuf,
    #[command(flatten)]
    pub store: StoreArg,
}

#[derive(Debug, Args)]
pub struct EnrichArgs {
    /// Directory with geo.csv, asn.csv, rdns.csv and os_sigs.csv.
    #[arg(long)]
    pub tables: PathBuf,
    #[command(flatten)]
    pub store: StoreArg,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Whitespace-separated `field<op>value` terms, all of which must hold;
    /// empty matches every trace.
    #[arg(default_value = "")]
    pub filter: String,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Only traces with a larger id.
    #[arg(long)]
    pub after_id: Option<u64>,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub store: StoreArg,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Restrict clustering to matching traces.
    #[arg(long, default_value = "")]
    pub filter: String,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub store: StoreArg,
}

/// Verbs of the standalone `dci` binary.
#[derive(Debug, Subcommand)]
pub enum DciCommand {
    /// Append traces.jsonl records to the store.
    Ingest(IngestArgs),
    /// Annotate stored traces from offline lookup tables.
    Enrich(EnrichArgs),
    /// Print traces matching a filter as JSON lines.
    Query(QueryArgs),
    /// k-means over stored traces; records each trace's cluster.
    Cluster(ClusterArgs),
}

impl DciCommand {
    pub fn run(self) -> Result<(), CliError> {
        match self {
            DciCommand::Ingest(a) => ingest(a),
            DciCommand::Enrich(a) => enrich(a),
            DciCommand::Query(a) => query(a),
            DciCommand::Cluster(a) => cluster(a),
        }
    }
}

pub(crate) fn ingest(a: IngestArgs) -> Result<(), CliError> {
    let records = read_traces_jsonl(read_bytes(&a.file)?.as_slice())?;
    let mut store = a.store.open()?;
    let ids = store.ingest_batch(records)?;
    match (ids.first(), ids.last()) {
        (Some(lo), Some(hi)) => eprintln!("ingested {} traces, ids {lo}..={hi}", ids.len()),
        _ => eprintln!("nothing to ingest"),
    }
    Ok(())
}

pub(crate) fn enrich(a: EnrichArgs) -> Result<(), CliError> {
    let tables = EnrichmentTables::load(&a.tables)?;
    let mut store = a.store.open()?;
    let changed: Vec<Annotation> = store
        .iter()
        .filter_map(|t| {
            let mut e = enrich_trace(&t.base, &tables);
            e.cluster_id = t.cluster_id;
            (e != *t).then(|| Annotation::of(&e))
        })
        .collect();
    let n = changed.len();
    store.annotate(changed)?;
    eprintln!("{n} of {} traces annotated", store.len());
    Ok(())
}

pub(crate) fn query(a: QueryArgs) -> Result<(), CliError> {
    let filter: Filter = a.filter.parse()?;
    let store = a.store.open()?;
    let page = store.query(&filter, a.limit, a.after_id);
    let mut buf = Vec::new();
    for t in &page.items {
        to_json_line(&mut buf, t)?;
    }
    emit(a.out.as_deref(), &buf)?;
    if let Some(next) = page.next_after {
        eprintln!("more results: --after-id {next}");
    }
    Ok(())
}

#[derive(Serialize)]
struct ClusterSummary {
    k: usize,
    seed: u64,
    traces: usize,
    objective: f64,
    converged: bool,
    iterations: usize,
    sizes: Vec<usize>,
    centroids: Vec<Vec<f64>>,
}

pub(crate) fn cluster(a: ClusterArgs) -> Result<(), CliError> {
    let filter: Filter = a.filter.parse()?;
    let mut store = a.store.open()?;
    let selected = store.query(&filter, None, None).items;
    let vectors: Vec<Vec<f64>> = selected.iter().map(trace_vector).collect();
    let c = cluster_traces(&vectors, a.k, a.seed)?;
    let mut sizes = vec![0; a.k];
    let mut changed = Vec::new();
    for (t, &label) in selected.iter().zip(&c.assignments) {
        sizes[label] += 1;
        let id = Some(label as u32);
        if t.cluster_id != id {
            let mut ann = Annotation::of(t);
            ann.cluster_id = id;
            changed.push(ann);
        }
    }
    store.annotate(changed)?;
    let summary = ClusterSummary {
        k: a.k,
        seed: a.seed,
        traces: selected.len(),
        objective: c.objective(),
        converged: c.converged,
        iterations: c.objective_history.len(),
        sizes,
        centroids: c.centroids,
    };
    let mut buf = Vec::new();
    to_json_line(&mut buf, &summary)?;
    emit(a.out.as_deref(), &buf)
}
