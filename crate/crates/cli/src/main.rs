use std::process::ExitCode;

use nemesys_cli::{entry, Cli};

fn main() -> ExitCode {
    entry(std::env::args_os(), Cli::run)
}
