use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pfcc_cli::commands::{
    cmd_compare_gains, cmd_run, cmd_validate, format_comparison, model_exit_code, CompareOptions, RunOverrides,
    EXIT_ASSUMPTION, EXIT_FAILURE, EXIT_OK,
};
use pfcc_cli::scenario::ModeFile;

#[derive(Parser)]
#[command(name = "pfcc", version, about = "Propensity formation-containment control scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the schema and the standing assumptions of a scenario.
    Validate { scenario: PathBuf },
    /// Simulate a scenario and export its trace.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeFile>,
        /// Directory receiving trace.csv and trace.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        sample_interval: Option<u64>,
    },
    /// Compare data-driven gains with model-based value iteration per agent.
    CompareGains {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 2)]
        episode_len: usize,
        /// Added to Q[0][0] of the model-based problem only.
        #[arg(long, default_value_t = 0.0)]
        q_perturbation: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => match cmd_validate(&scenario) {
            Ok(report) => {
                print!("{report}");
                if report.passed() {
                    println!("{}: valid", scenario.display());
                    exit(EXIT_OK)
                } else {
                    exit(EXIT_ASSUMPTION)
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", scenario.display());
                exit(e.exit_code())
            }
        },
        Command::Run {
            scenario,
            seed,
            horizon,
            mode,
            out,
            sample_interval,
        } => {
            let overrides = RunOverrides {
                seed,
                horizon,
                mode,
                sample_interval,
            };
            match cmd_run(&scenario, &overrides, &out) {
                Ok(outcome) => {
                    println!(
                        "{} records written to {} ({})",
                        outcome.records,
                        outcome.paths.trace.display(),
                        outcome.paths.meta.display()
                    );
                    match outcome.error {
                        None => exit(EXIT_OK),
                        Some(e) => {
                            eprintln!("run aborted: {e}");
                            exit(model_exit_code(&e))
                        }
                    }
                }
                Err(e) => {
                    eprintln!("{}: {e}", scenario.display());
                    exit(e.exit_code())
                }
            }
        }
        Command::CompareGains {
            scenario,
            seed,
            episode_len,
            q_perturbation,
            tolerance,
        } => {
            let opts = CompareOptions {
                seed,
                episode_len,
                q_perturbation,
                tolerance,
            };
            match cmd_compare_gains(&scenario, &opts) {
                Ok(rows) => {
                    print!("{}", format_comparison(&rows, tolerance));
                    if rows.iter().all(|r| r.within(tolerance)) {
                        exit(EXIT_OK)
                    } else {
                        exit(EXIT_FAILURE)
                    }
                }
                Err(e) => {
                    eprintln!("{}: {e}", scenario.display());
                    exit(e.exit_code())
                }
            }
        }
    }
}
