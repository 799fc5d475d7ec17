use std::process::ExitCode;

use clap::Parser;
use moser::cli::{record_error, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.global.out.clone();
    match run(cli) {
        Ok((summary, _)) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = e.report();
            record_error(&out, &report);
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(report.exit as u8)
        }
    }
}
