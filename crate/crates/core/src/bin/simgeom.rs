use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use simgeom::cli::{replay, run, write_report, Args, CliError, RunConfig};

fn main() -> ExitCode {
    let args = Args::parse();
    let start = Instant::now();
    match execute(&args) {
        Ok(()) => {
            eprintln!("elapsed: {:.3}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    let (report, output) = match &args.replay {
        Some(path) => {
            let (config, report) = replay(path)?;
            (report, args.output.clone().or(config.output))
        }
        None => {
            let config = RunConfig::from_args(args)?;
            (run(&config)?, config.output)
        }
    };
    write_report(output.as_deref(), &report)
}
