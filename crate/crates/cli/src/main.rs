use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use memlab_cli::{exit, parse_config, parse_overrides, CliError, Command};

/// Run a memory-rule experiment and write `raw.csv` and `summary.json`.
#[derive(Debug, Parser)]
#[command(name = "memlab", version)]
struct Args {
    /// capacity | learnability | recall | equivalence
    command: String,
    /// JSON object with experiment fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn run(args: Args) -> Result<i32, CliError> {
    let cmd = Command::parse(&args.command)?;
    let mut overrides = parse_overrides(&args.overrides)?;
    // `--config` may also trail the field overrides
    let mut config = args.config;
    if let Some(i) = overrides.iter().position(|(k, _)| k == "config") {
        config = Some(PathBuf::from(overrides.remove(i).1));
    }
    let text = match &config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        None => None,
    };
    let cfg = parse_config(cmd, text.as_deref(), &overrides)?;
    memlab_cli::execute(&cfg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { exit::ERROR } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("memlab: {e}");
            ExitCode::from(exit::ERROR as u8)
        }
    }
}
