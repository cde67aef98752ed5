//! Runs the full acceptance battery and prints one PASS/FAIL line per
//! criterion. Exits nonzero if any criterion fails.

use std::process::ExitCode;

use eh_policy::criteria;

fn main() -> ExitCode {
    let mut failed = Vec::new();
    for id in criteria::ALL {
        match criteria::run(id) {
            Ok(result) => {
                println!("{result}");
                if !result.pass {
                    failed.push(id);
                }
            }
            Err(e) => {
                println!("criterion {id:>2} [FAIL] {e:#}");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria::ALL.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
