//! `memaudit`: batch memorization audits from the command line.
//!
//! Exit codes: `0` on success, `2` on input or configuration errors, `3`
//! when the audit finished but some generated images could not be processed
//! (the report is still written and lists every failure).

pub mod bench;
pub mod cli;
pub mod commands;
pub mod manifest;
pub mod report;
pub mod run;

use anyhow::{Context, Result};

use cli::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 2;
pub const EXIT_PARTIAL_FAILURE: i32 = 3;

fn dispatch(cli: &Cli) -> Result<usize> {
    match &cli.command {
        Command::Audit(args) => run::run_audit(args),
        Command::Score(args) => commands::run_score(args).map(|()| 0),
        Command::Cluster(args) => commands::run_cluster(args).map(|()| 0),
        Command::Bench(args) => {
            let output = bench::run_bench(args)?;
            let mut text = serde_json::to_string_pretty(&output).context("serializing timings")?;
            text.push('\n');
            print!("{text}");
            if let Some(path) = &args.out {
                std::fs::write(path, &text)
                    .with_context(|| format!("writing timings '{}'", path.display()))?;
            }
            Ok(0)
        }
    }
}

/// Runs one parsed invocation and maps the outcome to an exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(0) => EXIT_OK,
        Ok(failures) => {
            eprintln!("warning: {failures} generation(s) failed; see the report's failure list");
            EXIT_PARTIAL_FAILURE
        }
        Err(error) => {
            eprintln!("error: {error:#}");
            EXIT_INPUT_ERROR
        }
    }
}
