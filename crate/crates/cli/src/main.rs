//! `indiff`: command-line front end for the indifference-pricing engine.
//!
//! Exit status: 0 on success, 2 when a claim is not replicable, 1 on any
//! other error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "indiff", version, about = "Large-trader dynamics with market indifference prices")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Directory for the JSON summary and CSV tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for generated trees and simulated samples.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance for residual checks.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub tol: f64,
    /// Cap on the number of strategy evaluations in searches.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve cash balances, weights and utility levels along a strategy.
    Simulate {
        /// Tree JSON; a random tree is drawn from `--seed` when omitted.
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Panel TOML; one exponential maker with unit risk aversion by default.
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Positions keyed by node id (JSON); zero by default.
        #[arg(long)]
        strategy: Option<PathBuf>,
    },
    /// Search for the cheapest superreplicating strategy.
    Superreplicate {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        claim: PathBuf,
    },
    /// Completeness of a binomial model with one exponential maker.
    Completeness {
        #[arg(long)]
        model: PathBuf,
    },
    /// Exact replication price and hedge in a binomial model.
    Replicate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        claim: PathBuf,
    },
    /// The two-period model in which the superreplication price is not attained.
    Counterexample {
        #[arg(long, default_value_t = 0.5)]
        p1: f64,
        #[arg(long, default_value_t = 0.6)]
        p2: f64,
        #[arg(long, default_value_t = 0.4)]
        p3: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        psi_u: f64,
        #[arg(long, default_value_t = 0.0)]
        psi_d: f64,
        /// First-period positions at which the limits are traced.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        q: Vec<f64>,
    },
    /// Losses of growing one-period positions started at time `t-1`.
    FrictionProbe {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        t: usize,
        /// Utility levels at the starting nodes, one per maker; `-1` each by default.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        levels: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        scales: Vec<f64>,
        /// Direction per node (JSON); a unit position in every security by default.
        #[arg(long)]
        strategy: Option<PathBuf>,
    },
    /// Decreasing-tails condition at time `t` of a tree.
    TailsTree {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        t: usize,
        /// Use ray ratios at this magnitude instead of the extrema criterion.
        #[arg(long)]
        q: Option<f64>,
    },
    /// Tail decay for a Lévy triplet and observed increments.
    TailsLevy {
        #[arg(long)]
        triplet: PathBuf,
        #[arg(long)]
        h: f64,
        /// Increments, one per line.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        q: Vec<f64>,
    },
    /// Brackets and the sixth-order coefficient for a BNS model.
    TailsBns {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long, default_value_t = 0.5)]
        h: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// Simulated increments.
        #[arg(long, default_value_t = 20)]
        paths: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,10,50")]
        q: Vec<f64>,
        /// Brackets below `-limit` at the largest `|q|` count as diverging.
        #[arg(long, default_value_t = 1e3)]
        limit: f64,
    },
}

fn init_threads() {
    if let Some(n) = std::env::var("INDIFF_THREADS").ok().and_then(|s| s.parse::<usize>().ok()).filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
