use clap::Parser;
use memaudit_cli::{cli::Cli, run};

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(&cli));
}
