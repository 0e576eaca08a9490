//! Command-line verbs of the testbed.
//!
//! Stages hand off through files: `simulate` writes `events.jsonl` and
//! `cdr.csv`, `detect` reads them and writes `alerts.jsonl`, `honeynode`
//! writes a `traces.jsonl` that `ingest` accepts as is. Exit status is 0 on
//! success, 1 for bad input or usage and 2 for runtime failures.

mod dci;
mod honey;
mod pipeline;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nemesys_core::dci::DciError;
use nemesys_service::ServiceError;
use thiserror::Error;

pub use dci::{ClusterArgs, DciCommand, EnrichArgs, IngestArgs, QueryArgs, StoreArg};
pub use honey::HoneynodeArgs;
pub use pipeline::{DetectArgs, ReportArgs, ServeArgs, SimulateArgs, TrainArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] nemesys_core::Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

via_core!(
    nemesys_core::netsim::SimError,
    nemesys_core::attacks::AttackError,
    nemesys_core::features::FeatureError,
    nemesys_core::detect::DetectError,
    nemesys_core::dci::DciError,
    nemesys_core::honeynode::HoneyError
);

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::Invalid(_) => 1,
            CliError::Write { .. } | CliError::Runtime(_) => 2,
            CliError::Core(e) => validation_code(e),
            CliError::Service(ServiceError::Config { .. } | ServiceError::BadBind(_)) => 1,
            CliError::Service(ServiceError::Core(e)) => validation_code(e),
            CliError::Service(ServiceError::Store(DciError::StorageFailure(_))) => 2,
            CliError::Service(ServiceError::Store(_)) => 1,
            CliError::Service(ServiceError::Io(_)) => 2,
        }
    }
}

fn validation_code(e: &nemesys_core::Error) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

#[derive(Debug, Parser)]
#[command(name = "nemesys", version, about = "Mobile network security testbed", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario; writes events.jsonl and cdr.csv.
    Simulate(SimulateArgs),
    /// Run the detectors over simulator output; writes alerts.jsonl.
    Detect(DetectArgs),
    /// Train an RNN model on a simulated, attack-labelled scenario.
    Train(TrainArgs),
    /// Append traces.jsonl records to a trace store.
    Ingest(IngestArgs),
    /// Annotate stored traces from offline lookup tables.
    Enrich(EnrichArgs),
    /// Print stored traces matching a filter as JSON lines.
    Query(QueryArgs),
    /// k-means over stored traces; records each trace's cluster.
    Cluster(ClusterArgs),
    /// Replay events through a mediated honeypot node.
    Honeynode(HoneynodeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Summarise an alerts file.
    Report(ReportArgs),
}

impl Cli {
    pub fn run(self) -> Result<(), CliError> {
        match self.command {
            Command::Simulate(a) => pipeline::simulate(a),
            Command::Detect(a) => pipeline::detect(a),
            Command::Train(a) => pipeline::train(a),
            Command::Ingest(a) => dci::ingest(a),
            Command::Enrich(a) => dci::enrich(a),
            Command::Query(a) => dci::query(a),
            Command::Cluster(a) => dci::cluster(a),
            Command::Honeynode(a) => honey::honeynode(a),
            Command::Serve(a) => pipeline::serve(a),
            Command::Report(a) => pipeline::report(a),
        }
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit status.
/// Usage errors print clap's message with usage and exit 1.
pub fn entry<P: Parser>(args: impl IntoIterator<Item = OsString>, exec: impl FnOnce(P) -> Result<(), CliError>) -> ExitCode {
    match P::try_parse_from(args) {
        Ok(parsed) => match exec(parsed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code())
            }
        },
        Err(e) => {
            let _ = e.print();
            ExitCode::from(if e.use_stderr() { 1 } else { 0 })
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

/// Writes `bytes` to `path`, creating parent directories.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |source| CliError::Write { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    std::fs::write(path, bytes).map_err(fail)
}

/// Writes to `path` when given, else to stdout.
pub(crate) fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Runtime(format!("stdout: {e}")))
        }
    }
}

pub(crate) fn to_json_line<T: serde::Serialize>(buf: &mut Vec<u8>, value: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *buf, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    buf.push(b'\n');
    Ok(())
}
