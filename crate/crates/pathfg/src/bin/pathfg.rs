//! Command-line front end: closed-loop simulation, the horizon comparison
//! study, and scene validation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pathfg::sim::{self, Verdict};

#[derive(Parser)]
#[command(name = "pathfg", about = "Path feasibility governor simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Scenario configuration file (JSON)
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the governed closed loop and write trajectory/path/summary files
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare governed and ungoverned MPC across prediction horizons
    HorizonStudy {
        #[command(flatten)]
        config: ConfigArg,
        /// Governed horizons, comma-separated (e.g. 5,15)
        #[arg(long, value_delimiter = ',')]
        governed: Vec<usize>,
        /// Ungoverned horizons, comma-separated (e.g. 5,20,50)
        #[arg(long, value_delimiter = ',')]
        ungoverned: Vec<usize>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a scenario configuration
    ValidateScene {
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = sim::load_config(&config.config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let log = sim::run_closed_loop(&cfg)?;
            let hover = -cfg.model.mass_kg * cfg.model.gravity_mps2;
            sim::write_outputs(&log, hover, &out)?;
            let summary = sim::output::summarize(&log);
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(if log.verdict == Verdict::Converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::HorizonStudy {
            config,
            governed,
            ungoverned,
            out,
        } => {
            let cfg = sim::load_config(&config.config)?;
            let report = sim::run_horizon_study(&cfg, &governed, &ungoverned)?;
            std::fs::create_dir_all(&out)?;
            let text = serde_json::to_string_pretty(&report)?;
            std::fs::write(out.join("horizon_study.json"), format!("{text}\n"))?;
            println!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateScene { config } => {
            let cfg = sim::load_config(&config.config)?;
            println!(
                "ok: horizon {}, {} obstacles, planner {:?}",
                cfg.horizon,
                cfg.scene.obstacles.len(),
                cfg.planner.kind
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
