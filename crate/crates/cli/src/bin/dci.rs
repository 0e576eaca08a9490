//! Standalone front end of the trace store.

use std::process::ExitCode;

use clap::Parser;
use nemesys_cli::{entry, DciCommand};

#[derive(Parser)]
#[command(name = "dci", version, about = "Attack trace store", arg_required_else_help = true)]
struct Dci {
    #[command(subcommand)]
    command: DciCommand,
}

fn main() -> ExitCode {
    entry(std::env::args_os(), |d: Dci| d.command.run())
}
