use std::process::ExitCode;

use batchcal::cli::{expand_config, run, Cli, CliError};
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match try_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn try_main() -> anyhow::Result<()> {
    let args = expand_config(std::env::args().collect())?;
    // clap prints usage errors itself and exits with status 2.
    let cli = Cli::parse_from(args);
    run(&cli)?;
    Ok(())
}
