mod run;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = run::Cli::parse();
    match run::dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
