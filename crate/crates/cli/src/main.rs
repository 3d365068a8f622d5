use std::process::ExitCode;

use clap::Parser;
use sweep_cli::{configure_threads, error_json, run, write_atomic, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = cli.command.opts();
    let result = configure_threads().and_then(|_| run(&cli.command));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("sweepctl {}: verdict failed, see {}", cli.command.name(), opts.out.display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("sweepctl {}: {e}", cli.command.name());
            let body = format!("{:#}\n", error_json(&e));
            if let Err(w) = write_atomic(&opts.out, "error.json", &body) {
                eprintln!("could not write error.json: {w}");
            }
            ExitCode::from(2)
        }
    }
}
