use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::Parser;

use qkdsim_core::scenario::{self, ScenarioConfig, ScenarioKind};
use qkdsim_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Simulate a phase-coding decoy-state BB84 link with a polarization-insensitive receiver.
#[derive(Debug, Parser)]
#[command(name = "qkdsim", version)]
struct Cli {
    /// Scenario to run.
    #[arg(value_parser = PossibleValuesParser::new(ScenarioKind::ALL.map(|k| k.name())))]
    scenario: String,

    /// JSON config with optional `system`, `channel`, `scenario` and `security` blocks.
    #[arg(long)]
    config: PathBuf,

    /// Run seed; overrides `scenario.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for the CSV tables and `summary.json`.
    #[arg(long, default_value = "qkdsim-out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind: ScenarioKind = match cli.scenario.parse() {
        Ok(k) => k,
        Err(e) => return fail(&e, EXIT_CONFIG),
    };
    let config = match ScenarioConfig::load(&cli.config).and_then(|c| {
        let c = match cli.seed {
            Some(seed) => c.with_seed(seed),
            None => c,
        };
        c.validate(kind)?;
        Ok(c)
    }) {
        Ok(c) => c,
        Err(e) => return fail(&e, EXIT_CONFIG),
    };

    let written = scenario::run(kind, &config).and_then(|report| report.write_to(&cli.out));
    match written {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => fail(&e, EXIT_CONFIG),
        Err(e) => fail(&e, EXIT_RUNTIME),
    }
}

fn fail(err: &Error, code: u8) -> ExitCode {
    eprintln!("qkdsim: {err}");
    ExitCode::from(code)
}
