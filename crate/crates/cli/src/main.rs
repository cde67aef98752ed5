use std::process::ExitCode;

use eh_policy::{exit_code, run, Outcome};

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    match run(std::env::args(), &mut stdout.lock()) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CriteriaFailed) => ExitCode::from(1),
        Err(err) => {
            match err.downcast_ref::<clap::Error>() {
                Some(usage) => {
                    let _ = usage.print();
                }
                None => eprintln!("error: {err:#}"),
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
