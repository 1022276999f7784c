use clap::Parser;

use mloz::cli::{run, Cli, EXIT_CRITERIA_FAILED};
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("MLOZ_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli, args) {
        Ok(out) => {
            if let Some(p) = &out.manifest_path {
                eprintln!("manifest: {}", p.display());
            }
            if !out.criteria_passed {
                std::process::exit(EXIT_CRITERIA_FAILED);
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.class().exit_code());
        }
    }
}
