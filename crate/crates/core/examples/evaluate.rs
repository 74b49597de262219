//! Scores a saved run directory against a ground-truth directory.
//!
//! cargo run --example evaluate -- <run-dir> [truth-dir]
//!
//! The truth directory defaults to `<run-dir>/truth`.

use std::path::PathBuf;
use std::process::ExitCode;

use aegem::pipeline::{evaluate_dir, TRUTH_DIR};

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let Some(run) = args.next().map(PathBuf::from) else {
        eprintln!("usage: evaluate <run-dir> [truth-dir]");
        return ExitCode::from(1);
    };
    let truth = args.next().map(PathBuf::from).unwrap_or_else(|| run.join(TRUTH_DIR));
    match evaluate_dir(&run, &truth) {
        Ok(report) => {
            print!("{}", report.to_text());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
