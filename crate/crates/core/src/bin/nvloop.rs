use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nvloop::scenario::{run, Overrides, RunConfig, Scenario};

/// Drive-chain, field-map and NV spin scenarios for an impedance-tuned microwave loop.
#[derive(Debug, Parser)]
#[command(name = "nvloop", version)]
struct Cli {
    /// One of: tune, map, esr, rabi, odmr, casr, inductance.
    scenario: String,
    /// TOML file with dotted, unit-suffixed keys.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_OTHER: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        output_dir: cli.out,
        seed: cli.seed,
    };
    let cfg = match cli
        .scenario
        .parse::<Scenario>()
        .and_then(|sc| RunConfig::load(&cli.config, sc, &overrides))
    {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("nvloop: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&cfg) {
        Ok(report) => {
            print!("{}", report.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nvloop: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_OTHER })
        }
    }
}
