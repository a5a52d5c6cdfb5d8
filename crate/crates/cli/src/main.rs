//! stepsim: calibrate runtime tables, balance batches across ranks, plan
//! activation placement, and replay traces through the step simulator.

mod commands;
mod config;
mod errors;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::PlanMode;

#[derive(Parser)]
#[command(
    name = "stepsim",
    version,
    about = "Batch balancing, checkpoint planning, and trace-driven step simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a piecewise-linear runtime table from measurements.
    Calibrate {
        /// CSV file with a `seqlen,runtime_ms` header.
        measurements: PathBuf,
        /// Where to write the table JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan the sample exchange that balances one batch across ranks.
    Balance {
        /// Runtime table JSON from `calibrate`.
        #[arg(long)]
        table: PathBuf,
        /// Batch JSON: {"batch_id": N, "samples": [{"id", "seqlen", "origin_rank"}, ..]}.
        #[arg(long)]
        batch: PathBuf,
        /// Number of ranks to spread the batch over.
        #[arg(long)]
        ranks: usize,
        /// Where to write the plan JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose activation placements for a segment graph under memory budgets.
    PlanAc {
        /// Segment graph JSON.
        #[arg(long)]
        graph: PathBuf,
        /// Memory tier budgets and bandwidths JSON.
        #[arg(long)]
        tiers: PathBuf,
        /// greedy scales to long graphs; exact proves optimality on short ones.
        #[arg(long, value_enum, default_value_t = PlanMode::Greedy)]
        mode: PlanMode,
        /// Where to write the plan and cost JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a batch trace through the cluster simulator.
    Simulate {
        /// TOML or JSON config; paths inside it resolve relative to it.
        config: PathBuf,
        /// Where to write the report JSON.
        #[arg(long)]
        out: PathBuf,
        /// Run all four balancing modes and write a combined report.
        #[arg(long)]
        compare: bool,
        /// Also write per-step makespan/imbalance series (CSV and SVG).
        #[arg(long)]
        plots: bool,
        /// Override the config's noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate { measurements, out } => commands::cmd_calibrate(measurements, out),
        Command::Balance {
            table,
            batch,
            ranks,
            out,
        } => commands::cmd_balance(table, batch, *ranks, out),
        Command::PlanAc {
            graph,
            tiers,
            mode,
            out,
        } => commands::cmd_plan_ac(graph, tiers, *mode, out),
        Command::Simulate {
            config,
            out,
            compare,
            plots,
            seed,
        } => commands::cmd_simulate(config, out, *compare, *plots, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
