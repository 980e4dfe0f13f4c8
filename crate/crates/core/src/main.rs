use std::path::PathBuf;
use std::process::ExitCode;

use bars_core::harness::{exit_code, parse_config, run_to_dir, ConfigError, ExperimentId};
use bars_core::Error;
use clap::Parser;

/// Run one seeded experiment and write rows.csv and summary.json.
#[derive(Parser)]
#[command(name = "bars-lab", version)]
struct Args {
    /// gamma2, forward-hit, backward-hit, ratio, regret-static, regret-gap, bars, coupling or consistency
    experiment: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = parse_config(&args.config).and_then(|mut cfg| {
        if ExperimentId::parse(&args.experiment) != Some(cfg.id) {
            return Err(Error::Config(ConfigError::Conflict {
                key: "id".into(),
                config: cfg.id.to_string(),
                cli: args.experiment.clone(),
            }));
        }
        run_to_dir(&mut cfg, args.seed, &args.out)
    });
    match &result {
        Ok(r) if r.verdict() => println!("ok: {} rows written to {}", r.rows.len(), args.out.display()),
        Ok(r) => eprintln!("failing checks: {}", r.failing().join(", ")),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result))
}
