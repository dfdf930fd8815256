//! `gradflow`: config-driven runner for the gradient-flow scheme laboratory.
//!
//! Exit codes: 0 success, 1 one or more checks failed, 2 usage/config error.

use clap::{Parser, Subcommand};
use gradflow_core::scenario::{list_json, list_text, run_scenario, ScenarioConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gradflow", version, about = "gradient-flow proximal-scheme laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario described by a JSON config file.
    Run {
        /// Path to the JSON scenario config.
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides the config and GRADFLOW_THREADS).
        #[arg(long)]
        threads: Option<usize>,
        /// RNG seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the scenario catalog.
    List {
        /// Machine-readable catalog.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List { json } => {
            if json {
                println!("{}", list_json());
            } else {
                print!("{}", list_text());
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {}", config.display(), e);
                    return ExitCode::from(2);
                }
            };
            let mut cfg = match ScenarioConfig::from_json(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}", e);
                    return ExitCode::from(2);
                }
            };
            if let Some(out) = out {
                cfg.out_dir = Some(out.to_string_lossy().into_owned());
            }
            if let Some(seed) = seed {
                cfg.seed = Some(seed);
            }
            let threads = threads.or(cfg.threads).or_else(|| {
                std::env::var("GRADFLOW_THREADS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            });
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build_global()
                {
                    eprintln!("warning: thread pool already initialized: {}", e);
                }
            }
            match run_scenario(&cfg) {
                Ok(summary) => {
                    for c in &summary.checks {
                        println!(
                            "[{}] {} (value {:.6e}, bound {:.6e})",
                            if c.passed { "pass" } else { "FAIL" },
                            c.id,
                            c.value,
                            c.bound
                        );
                    }
                    if summary.passed {
                        println!("{}: all {} checks passed", summary.scenario, summary.checks.len());
                        ExitCode::SUCCESS
                    } else {
                        println!("{}: checks failed", summary.scenario);
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    use gradflow_core::GradFlowError as E;
                    eprintln!("error: {}", e);
                    match e {
                        E::Config(_) | E::Input(_) => ExitCode::from(2),
                        _ => ExitCode::from(1),
                    }
                }
            }
        }
    }
}
