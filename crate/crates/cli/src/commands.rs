//! Subcommand implementations. Each one reads its inputs, calls into the
//! core library, writes the report, and prints a one-line summary.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use stepsim_core::ac::{
    evaluate_plan, plan_exact, plan_greedy, CheckpointPlan, CostBreakdown, SegmentGraph, TierSpec,
};
use stepsim_core::balance::{origin_layout, plan_balance};
use stepsim_core::fault::{run_with_failures, FailureSchedule};
use stepsim_core::runtime::{parse_measurements_csv, RuntimeTable, SampleSpec};
use stepsim_core::sim::{compare_modes, run_simulation, BalancingMode, BatchTrace, SimReport};

use crate::config::{read_json, read_to_string, write_json, FaultSection, SimulateFile};
use crate::errors::CliError;
use crate::plot;

pub fn cmd_calibrate(measurements: &Path, out: &Path) -> Result<(), CliError> {
    let text = read_to_string(measurements)?;
    let rows = parse_measurements_csv(text.as_bytes())?;
    let table = RuntimeTable::from_measurements(&rows)?;
    write_json(out, &table)?;
    println!(
        "wrote {} breakpoints={}",
        out.display(),
        table.breakpoints().len()
    );
    Ok(())
}

// Batch files may carry a per-sample batch id; it defaults to the
// enclosing batch's so plain traces stay terse.
#[derive(Deserialize)]
struct BatchFileSample {
    id: u64,
    seqlen: u64,
    #[serde(default)]
    origin_rank: usize,
    batch_id: Option<u64>,
}

#[derive(Deserialize)]
struct BatchFile {
    batch_id: u64,
    samples: Vec<BatchFileSample>,
}

pub fn cmd_balance(
    table_path: &Path,
    batch_path: &Path,
    ranks: usize,
    out: &Path,
) -> Result<(), CliError> {
    let table: RuntimeTable = read_json(table_path)?;
    let file: BatchFile = read_json(batch_path)?;
    let batch: Vec<SampleSpec> = file
        .samples
        .iter()
        .map(|s| SampleSpec {
            id: s.id,
            seqlen: s.seqlen,
            origin_rank: s.origin_rank,
            batch_id: s.batch_id.unwrap_or(file.batch_id),
        })
        .collect();
    let plan = plan_balance(&batch, &table, ranks)?;

    let runtime_of: HashMap<u64, f64> = batch
        .iter()
        .map(|s| (s.id, table.estimate_runtime(s.seqlen)))
        .collect();
    let before = origin_layout(&batch, ranks)
        .iter()
        .map(|ids| ids.iter().map(|id| runtime_of[id]).sum::<f64>())
        .fold(0.0f64, f64::max);

    write_json(out, &plan)?;
    println!(
        "makespan_before={before} makespan_after={} moves={}",
        plan.assignment.makespan(),
        plan.exchange.moves.len()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlanMode {
    Greedy,
    Exact,
}

#[derive(Serialize)]
struct PlanAcReport {
    plan: CheckpointPlan,
    cost: CostBreakdown,
}

pub fn cmd_plan_ac(
    graph_path: &Path,
    tiers_path: &Path,
    mode: PlanMode,
    out: &Path,
) -> Result<(), CliError> {
    let graph: SegmentGraph = read_json(graph_path)?;
    let tiers: TierSpec = read_json(tiers_path)?;
    let plan = match mode {
        PlanMode::Greedy => plan_greedy(&graph, &tiers)?,
        PlanMode::Exact => plan_exact(&graph, &tiers)?,
    };
    let cost = evaluate_plan(&graph, &tiers, &plan)?;
    write_json(out, &PlanAcReport { plan, cost })?;
    println!(
        "total_overhead_ms={} persistent_gpu_bytes={}",
        cost.total_overhead_ms, cost.persistent_gpu_bytes
    );
    Ok(())
}

// Reports for all four balancing modes in a fixed field order.
#[derive(Serialize)]
struct CompareReport {
    none: SimReport,
    seqlen: SimReport,
    flops: SimReport,
    runtime: SimReport,
}

pub fn cmd_simulate(
    config_path: &Path,
    out: &Path,
    compare: bool,
    plots: bool,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let file = SimulateFile::load(config_path)?;
    let config = file.cluster_config(seed)?;
    let table: RuntimeTable = read_json(&file.table)?;
    let trace: BatchTrace = read_json(&file.trace)?;

    if compare {
        if file.fault.is_some() {
            return Err(CliError::new(
                "InvalidConfig",
                "--compare runs fault-free; drop the [fault] section",
            ));
        }
        let mut none = None;
        let mut seqlen = None;
        let mut flops = None;
        let mut runtime = None;
        for (mode, report) in compare_modes(&config, &trace, &table)? {
            if plots {
                plot::write_series(&report, out, Some(mode_tag(mode)))?;
            }
            match mode {
                BalancingMode::None => none = Some(report),
                BalancingMode::Seqlen => seqlen = Some(report),
                BalancingMode::Flops => flops = Some(report),
                BalancingMode::Runtime => runtime = Some(report),
            }
        }
        let combined = CompareReport {
            none: none.unwrap(),
            seqlen: seqlen.unwrap(),
            flops: flops.unwrap(),
            runtime: runtime.unwrap(),
        };
        write_json(out, &combined)?;
        println!(
            "wallclock_ms none={} seqlen={} flops={} runtime={}",
            combined.none.totals.wallclock_ms,
            combined.seqlen.totals.wallclock_ms,
            combined.flops.totals.wallclock_ms,
            combined.runtime.totals.wallclock_ms
        );
        return Ok(());
    }

    let report = match &file.fault {
        None => run_simulation(&config, &trace, &table)?,
        Some(fault) => {
            let schedule: FailureSchedule = read_json(&fault.schedule)?;
            let store = store_dir(fault, out);
            run_with_failures(
                &config,
                &trace,
                &table,
                &schedule,
                fault.snapshot_every,
                fault.snapshot_cost_ms,
                &store,
            )?
        }
    };
    write_json(out, &report)?;
    if plots {
        plot::write_series(&report, out, None)?;
    }
    println!(
        "wallclock_ms={} mean_imbalance={} state_digest={}",
        report.totals.wallclock_ms, report.totals.mean_imbalance, report.state_digest
    );
    Ok(())
}

fn mode_tag(mode: BalancingMode) -> &'static str {
    match mode {
        BalancingMode::None => "none",
        BalancingMode::Seqlen => "seqlen",
        BalancingMode::Flops => "flops",
        BalancingMode::Runtime => "runtime",
    }
}

fn store_dir(fault: &FaultSection, out: &Path) -> PathBuf {
    if let Some(dir) = std::env::var_os("STEPSIM_STORE_DIR") {
        return PathBuf::from(dir);
    }
    if let Some(dir) = &fault.store_dir {
        return dir.clone();
    }
    out.parent().unwrap_or(Path::new(".")).join("snapshots")
}
