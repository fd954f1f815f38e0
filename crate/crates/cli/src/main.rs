use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use fleetstation_cli::serve::{bind, serve, DEFAULT_PORT};
use fleetstation_cli::{load_map, load_scenario, merge_demo, metrics, replay_file, run, CliError};
use fleetstation_core::error::RecordError;

#[derive(Parser)]
#[command(name = "fleetstation", version, about = "Multi-robot ground station")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulator, fleet and operator gateway until interrupted.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
    },
    /// Drive a scenario headless from a command script and write a run record.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a record and check the final poses match.
    Replay {
        #[arg(long)]
        record: PathBuf,
    },
    /// Register and fuse two maps (ASCII or .rle).
    MergeDemo {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Cell size for ASCII maps, meters.
        #[arg(long, default_value_t = 0.05)]
        resolution: f64,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::PortInUse(_) => 3,
                CliError::Record(RecordError::Timeout { .. }) => 4,
                CliError::ReplayMismatch(_) => 5,
                _ => 1,
            })
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Serve {
            scenario,
            port,
            seed,
            host,
            time_scale,
        } => {
            let scenario = load_scenario(&scenario)?;
            let listener = bind(&host, port)?;
            let shutdown = Arc::new(AtomicBool::new(false));
            let flag = shutdown.clone();
            ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).expect("signal handler installs once");
            println!("listening on ws://{}", listener.local_addr()?);
            let seed = seed.unwrap_or(scenario.seed);
            let summary = serve(listener, &scenario, seed, shutdown, time_scale)?;
            for (robot, twist) in &summary.final_commands {
                println!("stopped {robot} linear={} angular={}", twist.linear, twist.angular);
            }
            println!(
                "shutdown after {} ticks, {} sessions, released teleop: [{}]",
                summary.ticks,
                summary.sessions_served,
                summary.released.join(", ")
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            scenario,
            script,
            out,
            seed,
        } => {
            let result = run(&scenario, &script, &out, seed);
            match &result {
                Ok(record) => print!("{}", metrics(record)),
                Err(CliError::Record(RecordError::Timeout { record, .. })) => print!("{}", metrics(record)),
                Err(_) => {}
            }
            result.map(|_| ExitCode::SUCCESS)
        }
        Command::Replay { record } => {
            let (again, diff) = replay_file(&record)?;
            print!("{}", metrics(&again));
            println!("replay matches: max final pose difference {diff:e}");
            Ok(ExitCode::SUCCESS)
        }
        Command::MergeDemo { a, b, resolution } => {
            let (a, b) = (load_map(&a, resolution)?, load_map(&b, resolution)?);
            let demo = merge_demo(&a, &b)?;
            println!(
                "offset of b relative to a: ({}, {}) cells, confidence {:.3}",
                demo.offset.0, demo.offset.1, demo.confidence
            );
            print!("{}", demo.merged.to_ascii());
            Ok(ExitCode::SUCCESS)
        }
    }
}
