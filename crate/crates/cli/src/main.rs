use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ness_cli::{run, ConfigError, RunConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ness", version, about = "Kinetic NESS experiments on a heated slab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario of a config and write its outputs.
    Run { config: PathBuf },
    /// Static checks of a config; prints the findings as JSON.
    Validate { config: PathBuf },
}

fn config_failure(e: &ConfigError) -> ExitCode {
    eprintln!("{}", json!({"error": e.to_string(), "key": e.key()}));
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_failure(&e),
            };
            let d = cfg.diagnostics();
            println!("{}", serde_json::to_string_pretty(&d).expect("diagnostics serialize"));
            if d.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Run { config } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_failure(&e),
            };
            match run(&cfg) {
                Ok(report) => {
                    let summary = json!({
                        "scenario": report.scenario,
                        "output_dir": report.config.output_dir,
                        "passed": report.passed,
                        "metrics": report.metrics,
                    });
                    println!("{}", serde_json::to_string_pretty(&summary).expect("report serializes"));
                    if report.passed == Some(false) {
                        ExitCode::FAILURE
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("{}", json!({"error": format!("{e:#}")}));
                    ExitCode::FAILURE
                }
            }
        }
    }
}
