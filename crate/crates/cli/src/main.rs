mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Replay(a) => commands::replay(a),
        Command::Mask(a) => commands::mask(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::FmpBench(a) => commands::fmp_bench(a),
        Command::SfmTrace(a) => commands::sfm_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("sfmedit: error: {message}");
            ExitCode::FAILURE
        }
    }
}
