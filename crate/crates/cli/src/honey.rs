use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;
use nemesys_core::dci::write_traces_jsonl;
use nemesys_core::honeynode::{read_events_jsonl, HoneyNode, MediationPolicy, RuleSet, SignatureDb};

use crate::{read_bytes, read_text, to_json_line, write_file, CliError};

#[derive(Debug, Args)]
pub struct HoneynodeArgs {
    /// Device activity in JSON lines, time-ordered.
    #[arg(long)]
    pub events: PathBuf,
    /// Mediation policy (TOML).
    #[arg(long)]
    pub policy: PathBuf,
    /// Behaviour rules (CSV); no behaviour scoring when absent.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Payload signatures (CSV); no scanning when absent.
    #[arg(long)]
    pub signatures: Option<PathBuf>,
    #[arg(long, default_value = "h1")]
    pub node_id: String,
    /// Most recent events scored by each behaviour assessment.
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    /// Output directory for traces.jsonl, wiretap.jsonl and audit.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

pub(crate) fn honeynode(a: HoneynodeArgs) -> Result<(), CliError> {
    let events = read_events_jsonl(read_bytes(&a.events)?.as_slice())?;
    let policy = MediationPolicy::from_toml_str(&read_text(&a.policy)?)?;
    let rules = match &a.rules {
        Some(p) => Some(RuleSet::from_csv(read_bytes(p)?.as_slice(), policy.premium_prefixes.clone())?),
        None => None,
    };
    let db = match &a.signatures {
        Some(p) => Some(SignatureDb::from_csv(read_bytes(p)?.as_slice())?),
        None => None,
    };
    if a.window == 0 {
        return Err(CliError::Invalid("--window must be >= 1".into()));
    }

    let mut node = HoneyNode::new(a.node_id.clone(), policy)?;
    let mut hits = BTreeSet::new();
    for e in events {
        node.mediate(e);
        if let Some(sig) = db.as_ref().and_then(|db| node.scan_latest(db)) {
            hits.insert(sig);
        }
        if let Some(rules) = &rules {
            node.assess(a.window, rules)?;
        }
    }

    let mut traces = Vec::new();
    write_traces_jsonl(&mut traces, &node.forwarded_traces())?;
    let mut wiretap = Vec::new();
    for entry in node.event_log() {
        to_json_line(&mut wiretap, entry)?;
    }
    let mut audit = Vec::new();
    for rec in node.audit() {
        to_json_line(&mut audit, rec)?;
    }
    write_file(&a.out.join("traces.jsonl"), &traces)?;
    write_file(&a.out.join("wiretap.jsonl"), &wiretap)?;
    write_file(&a.out.join("audit.jsonl"), &audit)?;

    let total = node.event_log().len();
    let forwarded = node.forwarded().count();
    eprintln!(
        "{total} events, {forwarded} forwarded, {} withheld; state {:?}; signatures: {}",
        total - forwarded,
        node.infection_state(),
        if hits.is_empty() { "none".to_string() } else { hits.into_iter().collect::<Vec<_>>().join(", ") }
    );
    Ok(())
}
