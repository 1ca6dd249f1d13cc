use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use osrct::commands::{
    cmd_gen_synthetic, cmd_protocol_check, cmd_report, cmd_run, cmd_validate,
    load_synthetic_config, RunOverrides, EXIT_OK,
};
use osrct::synthetic::SyntheticConfig;

/// Constructed observational studies from randomized trials.
#[derive(Parser)]
#[command(name = "osrct", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a benchmark config, its data and its biasing function.
    Validate { config: PathBuf },
    /// Run a benchmark and write report.json, trials.csv and metadata.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated built-in estimator ids.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render box statistics, plots and tables from one or more runs.
    Report {
        /// Run directories or report.json files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic potential-outcomes table and a randomized trial drawn from it.
    GenSynthetic {
        /// TOML file with the generator settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        units: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Conformance-test an external estimator adapter.
    ProtocolCheck {
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
        /// Adapter command and arguments (after `--`).
        #[arg(required = true, last = true)]
        command: Vec<String>,
    },
}

/// Prints to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json(value: &impl serde::Serialize) {
    emit(&serde_json::to_string_pretty(value).expect("serializes"));
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Validate { config } => {
            let (code, report) = cmd_validate(&config);
            print_json(&report);
            code
        }
        Command::Run {
            config,
            out,
            seed,
            trials,
            estimators,
            workers,
        } => {
            let overrides = RunOverrides {
                seed,
                trials,
                estimators,
                workers,
            };
            match cmd_run(&config, &out, &overrides) {
                Ok(report) => {
                    emit(&format!(
                        "{:<20} {:>6} {:>7} {:>14}",
                        "estimator", "ok", "failed", "mean |norm err|"
                    ));
                    for s in &report.summary {
                        let m = s
                            .mean_abs_norm_error
                            .map_or("-".into(), |v| format!("{v:.5}"));
                        emit(&format!(
                            "{:<20} {:>6} {:>7} {:>14}",
                            s.estimator, s.n_ok, s.n_failed, m
                        ));
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Report { inputs, out } => match cmd_report(&inputs, &out) {
            Ok(r) => {
                for f in r.files {
                    emit(&f.display().to_string());
                }
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::GenSynthetic {
            config,
            seed,
            units,
            out,
        } => {
            let cfg = match config.map(|p| load_synthetic_config(&p)).transpose() {
                Ok(c) => c.unwrap_or_default(),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(e.exit_code() as u8);
                }
            };
            let cfg = SyntheticConfig {
                seed: seed.unwrap_or(cfg.seed),
                n_units: units.unwrap_or(cfg.n_units),
                ..cfg
            };
            match cmd_gen_synthetic(&cfg, &out) {
                Ok(s) => {
                    print_json(&s);
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::ProtocolCheck { timeout, command } => {
            let (code, report) =
                cmd_protocol_check(&command, Duration::from_secs_f64(timeout.max(0.001)));
            print_json(&report);
            code
        }
    };
    ExitCode::from(code as u8)
}
