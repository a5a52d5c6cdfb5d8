//! Browser bindings for the interactive demo page.
//!
//! Three entry points, each taking plain numbers or JSON text and
//! returning a JSON string so the page needs no generated TypeScript:
//! rebalancing one batch, comparing the four balancing modes over a
//! generated trace, and planning activation placement under budgets.
//! Failures come back as `{"error": "..."}` rather than exceptions.
//!
//! The crate also builds natively so the demo logic runs under
//! `cargo test` without a wasm toolchain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use stepsim_core::ac::{
    evaluate_plan, plan_exact, plan_greedy, vanilla_ac_plan, zero_activation_plan, CheckpointPlan,
    CostBreakdown, SegmentGraph, TierSpec, DEFAULT_SLOT_CAP,
};
use stepsim_core::balance::{origin_layout, plan_balance};
use stepsim_core::runtime::{FlopsCoeffs, RuntimeTable, SampleSpec};
use stepsim_core::sim::{
    run_simulation, Batch, BatchTrace, ClusterConfig, NoiseSpec, PlannerLatency, ALL_MODES,
};

const MB: u64 = 1 << 20;

// Convex lookup shared by the balance and compare demos: runtime grows
// much faster than seqlen once sequences get long.
fn demo_table() -> RuntimeTable {
    RuntimeTable::from_measurements(&[(32, 1.0), (256, 12.0), (1024, 150.0), (4096, 2600.0)])
        .unwrap()
}

fn err_json(message: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": message.to_string() }).to_string()
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(err_json)
}

// ── Balance demo ────────────────────────────────────────────────────────

#[derive(Serialize)]
struct Layout {
    seqlens_per_rank: Vec<Vec<u64>>,
    load_ms_per_rank: Vec<f64>,
    makespan_ms: f64,
}

#[derive(Serialize)]
struct BalanceDemo {
    runtime_ms_per_sample: Vec<f64>,
    before: Layout,
    after: Layout,
    moves: usize,
}

fn layout_of(batch: &[SampleSpec], per_rank_ids: &[Vec<u64>], table: &RuntimeTable) -> Layout {
    let seqlen_of = |id: u64| batch.iter().find(|s| s.id == id).unwrap().seqlen;
    let seqlens_per_rank: Vec<Vec<u64>> = per_rank_ids
        .iter()
        .map(|ids| ids.iter().map(|&id| seqlen_of(id)).collect())
        .collect();
    let load_ms_per_rank: Vec<f64> = seqlens_per_rank
        .iter()
        .map(|ss| ss.iter().map(|&s| table.estimate_runtime(s)).sum())
        .collect();
    let makespan_ms = load_ms_per_rank.iter().cloned().fold(0.0, f64::max);
    Layout {
        seqlens_per_rank,
        load_ms_per_rank,
        makespan_ms,
    }
}

/// Rebalances one batch of sequence lengths over `ranks` ranks.
/// `seqlens_json` is a JSON array of positive integers; samples start
/// round-robin across ranks, the way a naive dispatcher lands them.
#[wasm_bindgen]
pub fn balance_demo(seqlens_json: &str, ranks: u32) -> String {
    let seqlens: Vec<u64> = match serde_json::from_str(seqlens_json) {
        Ok(v) => v,
        Err(e) => return err_json(format!("seqlens: {e}")),
    };
    let ranks = ranks as usize;
    let table = demo_table();
    let batch: Vec<SampleSpec> = seqlens
        .iter()
        .enumerate()
        .map(|(i, &seqlen)| SampleSpec {
            id: i as u64 + 1,
            seqlen,
            origin_rank: if ranks == 0 { 0 } else { i % ranks },
            batch_id: 0,
        })
        .collect();
    let plan = match plan_balance(&batch, &table, ranks) {
        Ok(p) => p,
        Err(e) => return err_json(e),
    };
    let demo = BalanceDemo {
        runtime_ms_per_sample: batch
            .iter()
            .map(|s| table.estimate_runtime(s.seqlen))
            .collect(),
        before: layout_of(&batch, &origin_layout(&batch, ranks), &table),
        after: layout_of(&batch, &plan.assignment.per_rank, &table),
        moves: plan.exchange.moves.len(),
    };
    to_json(&demo)
}

// ── Mode comparison demo ────────────────────────────────────────────────

#[derive(Serialize)]
struct ModeSeries {
    mode: String,
    makespans_ms: Vec<f64>,
    wallclock_ms: f64,
    mean_imbalance: f64,
}

#[derive(Serialize)]
struct CompareDemo {
    steps: usize,
    ranks: usize,
    modes: Vec<ModeSeries>,
}

/// Generates a mixed-length trace from `seed` and replays it under all
/// four balancing modes. Steps and ranks are clamped to page-scale sizes.
#[wasm_bindgen]
pub fn compare_demo(seed: u32, steps: u32, ranks: u32) -> String {
    let steps = steps.clamp(1, 60) as usize;
    let ranks = ranks.clamp(1, 16) as usize;
    let table = demo_table();

    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let batches = (0..steps)
        .map(|k| {
            let len = rng.gen_range(3 * ranks..=4 * ranks);
            let samples = (0..len)
                .map(|i| SampleSpec {
                    id: (k * 1000 + i) as u64,
                    seqlen: if rng.gen_bool(0.25) {
                        rng.gen_range(1024..=4096)
                    } else {
                        rng.gen_range(32..=512)
                    },
                    origin_rank: i % ranks,
                    batch_id: k as u64,
                })
                .collect();
            Batch {
                batch_id: k as u64,
                samples,
            }
        })
        .collect();
    let trace = BatchTrace { batches };

    let mut modes = Vec::with_capacity(ALL_MODES.len());
    for &mode in &ALL_MODES {
        let config = ClusterConfig {
            num_ranks: ranks,
            balancing_mode: mode,
            async_planning: true,
            planner_latency: PlannerLatency {
                fixed_ms: 1.0,
                per_sample_ms: 0.0,
            },
            cp_size: 1,
            all2all_ms_per_token: 0.0,
            allreduce_ms: 2.0,
            flops_coeffs: FlopsCoeffs::new(1.0, 2e-4).unwrap(),
            peak_flops_per_rank: 1000.0,
            noise: NoiseSpec {
                enabled: false,
                seed: seed as u64,
                amplitude: 0.0,
            },
        };
        let report = match run_simulation(&config, &trace, &table) {
            Ok(r) => r,
            Err(e) => return err_json(e),
        };
        modes.push(ModeSeries {
            mode: format!("{mode:?}").to_lowercase(),
            makespans_ms: report.per_step.iter().map(|s| s.makespan_ms).collect(),
            wallclock_ms: report.totals.wallclock_ms,
            mean_imbalance: report.totals.mean_imbalance,
        });
    }
    to_json(&CompareDemo {
        steps,
        ranks,
        modes,
    })
}

// ── Checkpoint planning demo ────────────────────────────────────────────

#[derive(Serialize)]
struct PlannedVariant {
    name: String,
    plan: CheckpointPlan,
    cost: CostBreakdown,
    fits: bool,
}

#[derive(Serialize)]
struct PlanDemo {
    decision_slots: usize,
    transient_mb: u64,
    variants: Vec<PlannedVariant>,
}

/// Plans activation placement for a segment graph (core graph JSON,
/// bytes) under MB budgets. Bandwidths are fixed: CPU moves 50 MB/ms,
/// disk 5 MB/ms. Returns vanilla and zero-activation baselines, the
/// greedy plan, and the exact plan when the graph is small enough.
#[wasm_bindgen]
pub fn plan_ac_demo(graph_json: &str, gpu_mb: f64, cpu_mb: f64, disk_mb: f64) -> String {
    let graph: SegmentGraph = match serde_json::from_str(graph_json) {
        Ok(g) => g,
        Err(e) => return err_json(format!("graph: {e}")),
    };
    let to_bytes = |mb: f64| (mb.max(0.0) * MB as f64) as u64;
    let tiers = TierSpec {
        gpu_capacity_bytes: to_bytes(gpu_mb),
        cpu_capacity_bytes: to_bytes(cpu_mb),
        disk_capacity_bytes: to_bytes(disk_mb),
        cpu_offload_bw: 50.0 * MB as f64,
        cpu_prefetch_bw: 50.0 * MB as f64,
        disk_offload_bw: 5.0 * MB as f64,
        disk_prefetch_bw: 5.0 * MB as f64,
    };

    let mut variants = Vec::new();
    let mut push = |name: &str, plan: CheckpointPlan| -> Result<(), String> {
        let cost = evaluate_plan(&graph, &tiers, &plan).map_err(|e| e.to_string())?;
        variants.push(PlannedVariant {
            name: name.to_string(),
            fits: cost.fits(&tiers),
            plan,
            cost,
        });
        Ok(())
    };

    if let Err(e) = push("vanilla", vanilla_ac_plan(&graph)) {
        return err_json(e);
    }
    if let Err(e) = push("zero_activation", zero_activation_plan(&graph)) {
        return err_json(e);
    }
    match plan_greedy(&graph, &tiers) {
        Ok(plan) => {
            if let Err(e) = push("greedy", plan) {
                return err_json(e);
            }
        }
        Err(e) => return err_json(format!("greedy: {e}")),
    }
    if graph.decision_slots() <= DEFAULT_SLOT_CAP {
        match plan_exact(&graph, &tiers) {
            Ok(plan) => {
                if let Err(e) = push("exact", plan) {
                    return err_json(e);
                }
            }
            Err(e) => return err_json(format!("exact: {e}")),
        }
    }

    to_json(&PlanDemo {
        decision_slots: graph.decision_slots(),
        transient_mb: graph.transient_gpu_bytes() / MB,
        variants,
    })
}
