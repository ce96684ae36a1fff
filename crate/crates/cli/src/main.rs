use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sorts_cli::{cmd_replay, cmd_selfplay, plot::cmd_plot, CliError};
use sorts_core::ExperimentSpec;

#[derive(Parser)]
#[command(name = "sorts", version, about = "Multi-aircraft landing planner experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every episode of a spec under both planners and summarize.
    Selfplay {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-simulate a logged episode and check it matches bit for bit.
    Replay {
        file: PathBuf,
        /// Skip printing the decision records.
        #[arg(long)]
        quiet: bool,
    },
    /// Draw trajectory and success-rate figures from a summary.
    Plot {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve live sessions over WebSocket.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "live-default.json")]
        spec: PathBuf,
        /// Directory for per-session decision logs and results.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
}

fn init_logging() {
    let level = std::env::var("SORTS_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    let known = ["error", "warn", "info", "debug"];
    let chosen = if known.contains(&level.as_str()) { level.as_str() } else { "info" };
    env_logger::Builder::new().parse_filters(chosen).init();
    if chosen != level {
        log::warn!("SORTS_LOG_LEVEL={level:?} is not one of error, warn, info, debug; using info");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Selfplay { spec, out, jobs } => {
            let report = cmd_selfplay(&spec, &out, jobs)?;
            println!("{} episodes, summary at {}", report.rows.len(), report.summary_csv.display());
            if !report.failures.is_empty() {
                return Err(CliError::Internal(format!("{} episode(s) failed", report.failures.len())));
            }
            Ok(())
        }
        Command::Replay { file, quiet } => {
            let mut sink: Box<dyn std::io::Write> = if quiet {
                Box::new(std::io::sink())
            } else {
                Box::new(std::io::stdout().lock())
            };
            match cmd_replay(&file, sink.as_mut()) {
                Ok(r) => {
                    eprintln!("match: {} ticks reproduced", r.ticks);
                    Ok(())
                }
                Err(e) => Err(e),
            }
        }
        Command::Plot { summary, out } => {
            let files = cmd_plot(&summary, &out)?;
            println!("wrote {} figure(s)", files.len());
            Ok(())
        }
        Command::Serve { port, spec, log_dir } => {
            let spec = ExperimentSpec::load(&spec)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
            let addr = SocketAddr::from(([0, 0, 0, 0], port));
            rt.block_on(sorts_live::serve(addr, spec, log_dir))
                .map_err(|e| CliError::Internal(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
