//! `ocdn`: run oblivious CDN nodes, publish content, manage rosters and keys,
//! and drive the simulator.
//!
//! Exit status is 0 on success, 1 when the configuration or arguments are
//! unusable (nothing is bound in that case) and 2 when a run fails.

mod admin;
mod nodes;
mod sim;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "ocdn", version, about = "Oblivious CDN nodes, publishing and simulation")]
struct Cli {
    /// Node configuration file (TOML).
    #[arg(long, global = true, env = "OCDN_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seal objects from a plan file and push them to cache nodes.
    Publish(admin::PublishArgs),
    /// Run a cache node.
    ServeCache,
    /// Run an exit proxy.
    ServeExit,
    /// Run a key distribution server for an origin.
    ServeKeydist,
    /// Client proxy: fetch a URL, or stay up relaying for peers.
    Client(nodes::ClientArgs),
    /// Replay a scenario in the simulator.
    Sim(sim::SimArgs),
    /// Create, edit and inspect signed exit rosters.
    Roster(admin::RosterArgs),
    /// Key pairs and shared-key rotation.
    Keys(admin::KeysArgs),
}

/// A failed command, split by exit status.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

pub trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Shared by every subcommand.
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Globals {
    pub fn seed_or_random(&self) -> u64 {
        self.seed.unwrap_or_else(rand::random)
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    let g = Globals { config: cli.config, seed: cli.seed };
    let result = match cli.command {
        Command::Publish(a) => admin::publish(&g, a),
        Command::ServeCache => nodes::serve_cache(&g),
        Command::ServeExit => nodes::serve_exit(&g),
        Command::ServeKeydist => nodes::serve_keydist(&g),
        Command::Client(a) => nodes::client(&g, a),
        Command::Sim(a) => sim::sim(&g, a),
        Command::Roster(a) => admin::roster(&g, a),
        Command::Keys(a) => admin::keys(&g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(e) | Failure::Runtime(e)) = &f;
            eprintln!("ocdn: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
