use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use vctail::cli::{error_record, error_record_for, run, RunConfig};

fn main() -> ExitCode {
    let cfg = match RunConfig::try_parse() {
        Ok(cfg) => cfg,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            eprintln!("{}", error_record("UsageError", "usage", &e.kind().to_string()));
            return ExitCode::from(1);
        }
    };
    match run(&cfg) {
        Ok(manifest) => {
            println!("wrote {} to {}", manifest.outputs.join(", "), cfg.output.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record_for(&e));
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
