use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = mixsel::Cli::parse();
    match mixsel::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(mixsel::exit_code(&e) as u8)
        }
    }
}
