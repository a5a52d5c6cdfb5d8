//! Activation checkpointing with multi-level placement.
//!
//! A model is cut into checkpoint segments. For each segment input and each
//! interior activation the planner picks one of: keep it in GPU memory,
//! offload it to CPU or disk and prefetch it back for backward, or (for
//! interiors) drop it and recompute. The analytic cost model charges
//! recomputation time plus the transfer time that the surrounding forward
//! and backward compute cannot hide. Transfers do not contend with each
//! other; each item's stall is computed independently.
//!
//! Backward at segment i needs that segment's input and interiors, so an
//! offloaded item's transfer can overlap the forward passes of segments
//! after i (offload) and the backward work of segments after i (prefetch,
//! backward running last to first).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AcError {
    #[error("plan shape does not match graph ({0})")]
    ShapeMismatch(String),
    #[error("graph has {slots} decision slots, cap is {cap}")]
    TooManySlots { slots: usize, cap: usize },
    #[error("no placement satisfies the memory budgets")]
    Infeasible,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid tiers: {0}")]
    InvalidTiers(String),
}

/// One activation-producing op inside a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteriorOp {
    pub cost_ms: f64,
    pub act_bytes: u64,
    pub compute_bound: bool,
}

/// One checkpoint segment: its input tensor, its interior ops, and the
/// cost of its backward pass proper (excluding recomputation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub input_bytes: u64,
    pub backward_ms: f64,
    pub interiors: Vec<InteriorOp>,
}

/// A chain of checkpoint segments; segment i feeds segment i+1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentGraph {
    pub segments: Vec<Segment>,
}

impl SegmentGraph {
    pub fn validate(&self) -> Result<(), AcError> {
        for (i, seg) in self.segments.iter().enumerate() {
            if !seg.backward_ms.is_finite() || seg.backward_ms < 0.0 {
                return Err(AcError::InvalidGraph(format!(
                    "segment {i} backward_ms {}",
                    seg.backward_ms
                )));
            }
            for (j, op) in seg.interiors.iter().enumerate() {
                if !op.cost_ms.is_finite() || op.cost_ms < 0.0 {
                    return Err(AcError::InvalidGraph(format!(
                        "segment {i} interior {j} cost_ms {}",
                        op.cost_ms
                    )));
                }
            }
        }
        Ok(())
    }

    /// Inputs plus interiors: the number of independent placement choices.
    pub fn decision_slots(&self) -> usize {
        self.segments.len()
            + self
                .segments
                .iter()
                .map(|s| s.interiors.len())
                .sum::<usize>()
    }

    /// Peak working set of a single segment's rematerialization.
    pub fn transient_gpu_bytes(&self) -> u64 {
        self.segments
            .iter()
            .map(|s| s.interiors.iter().map(|op| op.act_bytes).sum::<u64>())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPlacement {
    KeepGpu,
    OffloadCpu,
    OffloadDisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteriorPlacement {
    Recompute,
    SaveGpu,
    SaveCpu,
    SaveDisk,
}

/// One placement decision per segment input and per interior op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointPlan {
    pub inputs: Vec<InputPlacement>,
    pub interiors: Vec<Vec<InteriorPlacement>>,
}

/// Byte capacities and transfer bandwidths of the storage tiers.
/// Bandwidths are bytes per millisecond; GPU-resident data moves for free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierSpec {
    pub gpu_capacity_bytes: u64,
    pub cpu_capacity_bytes: u64,
    pub disk_capacity_bytes: u64,
    pub cpu_offload_bw: f64,
    pub cpu_prefetch_bw: f64,
    pub disk_offload_bw: f64,
    pub disk_prefetch_bw: f64,
}

impl TierSpec {
    pub fn validate(&self) -> Result<(), AcError> {
        for (name, bw) in [
            ("cpu_offload_bw", self.cpu_offload_bw),
            ("cpu_prefetch_bw", self.cpu_prefetch_bw),
            ("disk_offload_bw", self.disk_offload_bw),
            ("disk_prefetch_bw", self.disk_prefetch_bw),
        ] {
            if !bw.is_finite() || bw <= 0.0 {
                return Err(AcError::InvalidTiers(format!(
                    "{name} must be > 0, got {bw}"
                )));
            }
        }
        Ok(())
    }
}

/// Evaluated cost and footprint of one plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub recompute_ms: f64,
    pub offload_stall_ms: f64,
    pub prefetch_stall_ms: f64,
    pub total_overhead_ms: f64,
    pub persistent_gpu_bytes: u64,
    pub transient_gpu_bytes: u64,
    pub cpu_bytes: u64,
    pub disk_bytes: u64,
}

impl CostBreakdown {
    /// Whether this footprint fits the given budgets. The transient working
    /// set shares GPU capacity with persistently saved bytes.
    pub fn fits(&self, tiers: &TierSpec) -> bool {
        self.persistent_gpu_bytes + self.transient_gpu_bytes <= tiers.gpu_capacity_bytes
            && self.cpu_bytes <= tiers.cpu_capacity_bytes
            && self.disk_bytes <= tiers.disk_capacity_bytes
    }
}

fn check_shape(graph: &SegmentGraph, plan: &CheckpointPlan) -> Result<(), AcError> {
    if plan.inputs.len() != graph.segments.len() {
        return Err(AcError::ShapeMismatch(format!(
            "{} input decisions for {} segments",
            plan.inputs.len(),
            graph.segments.len()
        )));
    }
    if plan.interiors.len() != graph.segments.len() {
        return Err(AcError::ShapeMismatch(format!(
            "{} interior lists for {} segments",
            plan.interiors.len(),
            graph.segments.len()
        )));
    }
    for (i, (seg, decisions)) in graph.segments.iter().zip(&plan.interiors).enumerate() {
        if seg.interiors.len() != decisions.len() {
            return Err(AcError::ShapeMismatch(format!(
                "segment {i}: {} decisions for {} interiors",
                decisions.len(),
                seg.interiors.len()
            )));
        }
    }
    Ok(())
}

/// Applies the analytic cost model to one plan.
pub fn evaluate_plan(
    graph: &SegmentGraph,
    tiers: &TierSpec,
    plan: &CheckpointPlan,
) -> Result<CostBreakdown, AcError> {
    graph.validate()?;
    tiers.validate()?;
    check_shape(graph, plan)?;

    let n = graph.segments.len();
    let forward_cost: Vec<f64> = graph
        .segments
        .iter()
        .map(|s| s.interiors.iter().map(|op| op.cost_ms).sum())
        .collect();
    let recompute_seg: Vec<f64> = graph
        .segments
        .iter()
        .zip(&plan.interiors)
        .map(|(seg, ds)| {
            seg.interiors
                .iter()
                .zip(ds)
                .filter(|(_, d)| **d == InteriorPlacement::Recompute)
                .map(|(op, _)| op.cost_ms)
                .sum()
        })
        .collect();

    // Windows available to hide a segment-i transfer: all later forward
    // compute (offload), all later backward plus recompute work (prefetch).
    let mut fwd_after = vec![0.0f64; n];
    let mut bwd_after = vec![0.0f64; n];
    for i in (0..n.saturating_sub(1)).rev() {
        fwd_after[i] = fwd_after[i + 1] + forward_cost[i + 1];
        bwd_after[i] = bwd_after[i + 1] + graph.segments[i + 1].backward_ms + recompute_seg[i + 1];
    }

    let mut bd = CostBreakdown {
        recompute_ms: recompute_seg.iter().sum(),
        offload_stall_ms: 0.0,
        prefetch_stall_ms: 0.0,
        total_overhead_ms: 0.0,
        persistent_gpu_bytes: 0,
        transient_gpu_bytes: graph.transient_gpu_bytes(),
        cpu_bytes: 0,
        disk_bytes: 0,
    };

    let mut stall = |seg: usize, bytes: u64, offload_bw: f64, prefetch_bw: f64| {
        let b = bytes as f64;
        bd.offload_stall_ms += (b / offload_bw - fwd_after[seg]).max(0.0);
        bd.prefetch_stall_ms += (b / prefetch_bw - bwd_after[seg]).max(0.0);
    };

    for (i, (seg, placement)) in graph.segments.iter().zip(&plan.inputs).enumerate() {
        match placement {
            InputPlacement::KeepGpu => bd.persistent_gpu_bytes += seg.input_bytes,
            InputPlacement::OffloadCpu => {
                bd.cpu_bytes += seg.input_bytes;
                stall(
                    i,
                    seg.input_bytes,
                    tiers.cpu_offload_bw,
                    tiers.cpu_prefetch_bw,
                );
            }
            InputPlacement::OffloadDisk => {
                bd.disk_bytes += seg.input_bytes;
                stall(
                    i,
                    seg.input_bytes,
                    tiers.disk_offload_bw,
                    tiers.disk_prefetch_bw,
                );
            }
        }
    }
    for (i, (seg, decisions)) in graph.segments.iter().zip(&plan.interiors).enumerate() {
        for (op, d) in seg.interiors.iter().zip(decisions) {
            match d {
                InteriorPlacement::Recompute => {}
                InteriorPlacement::SaveGpu => bd.persistent_gpu_bytes += op.act_bytes,
                InteriorPlacement::SaveCpu => {
                    bd.cpu_bytes += op.act_bytes;
                    stall(i, op.act_bytes, tiers.cpu_offload_bw, tiers.cpu_prefetch_bw);
                }
                InteriorPlacement::SaveDisk => {
                    bd.disk_bytes += op.act_bytes;
                    stall(
                        i,
                        op.act_bytes,
                        tiers.disk_offload_bw,
                        tiers.disk_prefetch_bw,
                    );
                }
            }
        }
    }
    bd.total_overhead_ms = bd.recompute_ms + bd.offload_stall_ms + bd.prefetch_stall_ms;
    Ok(bd)
}

/// Keep every input on GPU, recompute every interior.
pub fn vanilla_ac_plan(graph: &SegmentGraph) -> CheckpointPlan {
    CheckpointPlan {
        inputs: vec![InputPlacement::KeepGpu; graph.segments.len()],
        interiors: graph
            .segments
            .iter()
            .map(|s| vec![InteriorPlacement::Recompute; s.interiors.len()])
            .collect(),
    }
}

/// Offload every input to CPU, recompute every interior: nothing persists
/// in GPU memory between forward and backward.
pub fn zero_activation_plan(graph: &SegmentGraph) -> CheckpointPlan {
    CheckpointPlan {
        inputs: vec![InputPlacement::OffloadCpu; graph.segments.len()],
        interiors: graph
            .segments
            .iter()
            .map(|s| vec![InteriorPlacement::Recompute; s.interiors.len()])
            .collect(),
    }
}

pub const DEFAULT_SLOT_CAP: usize = 12;

const INPUT_CHOICES: [InputPlacement; 3] = [
    InputPlacement::KeepGpu,
    InputPlacement::OffloadCpu,
    InputPlacement::OffloadDisk,
];
const INTERIOR_CHOICES: [InteriorPlacement; 4] = [
    InteriorPlacement::Recompute,
    InteriorPlacement::SaveGpu,
    InteriorPlacement::SaveCpu,
    InteriorPlacement::SaveDisk,
];

/// Minimizes total overhead over every feasible plan by exhaustive search
/// with budget pruning. Ties break toward lower persistent GPU bytes, then
/// toward the lexicographically earlier plan.
pub fn plan_exact(graph: &SegmentGraph, tiers: &TierSpec) -> Result<CheckpointPlan, AcError> {
    plan_exact_with_cap(graph, tiers, DEFAULT_SLOT_CAP)
}

pub fn plan_exact_with_cap(
    graph: &SegmentGraph,
    tiers: &TierSpec,
    cap: usize,
) -> Result<CheckpointPlan, AcError> {
    graph.validate()?;
    tiers.validate()?;
    let slots = graph.decision_slots();
    if slots > cap {
        return Err(AcError::TooManySlots { slots, cap });
    }
    if graph.transient_gpu_bytes() > tiers.gpu_capacity_bytes {
        return Err(AcError::Infeasible);
    }

    let mut plan = zero_activation_plan(graph);
    let mut best: Option<(f64, u64, CheckpointPlan)> = None;
    explore_inputs(graph, tiers, &mut plan, 0, 0, 0, 0, &mut best);
    match best {
        Some((_, _, p)) => Ok(p),
        None => Err(AcError::Infeasible),
    }
}

// Placement bytes only grow along a branch, so a budget overshoot prunes
// the whole subtree. Overheads are not monotone (later recompute choices
// widen earlier prefetch windows) and are only compared at leaves.
#[allow(clippy::too_many_arguments)]
fn explore_inputs(
    graph: &SegmentGraph,
    tiers: &TierSpec,
    plan: &mut CheckpointPlan,
    i: usize,
    gpu: u64,
    cpu: u64,
    disk: u64,
    best: &mut Option<(f64, u64, CheckpointPlan)>,
) {
    if i == graph.segments.len() {
        explore_interiors(graph, tiers, plan, 0, 0, gpu, cpu, disk, best);
        return;
    }
    let size = graph.segments[i].input_bytes;
    for choice in INPUT_CHOICES {
        let (g, c, d) = match choice {
            InputPlacement::KeepGpu => (gpu + size, cpu, disk),
            InputPlacement::OffloadCpu => (gpu, cpu + size, disk),
            InputPlacement::OffloadDisk => (gpu, cpu, disk + size),
        };
        if g + graph.transient_gpu_bytes() > tiers.gpu_capacity_bytes
            || c > tiers.cpu_capacity_bytes
            || d > tiers.disk_capacity_bytes
        {
            continue;
        }
        plan.inputs[i] = choice;
        explore_inputs(graph, tiers, plan, i + 1, g, c, d, best);
    }
    plan.inputs[i] = InputPlacement::KeepGpu;
}

#[allow(clippy::too_many_arguments)]
fn explore_interiors(
    graph: &SegmentGraph,
    tiers: &TierSpec,
    plan: &mut CheckpointPlan,
    seg: usize,
    op: usize,
    gpu: u64,
    cpu: u64,
    disk: u64,
    best: &mut Option<(f64, u64, CheckpointPlan)>,
) {
    if seg == graph.segments.len() {
        let bd = evaluate_plan(graph, tiers, plan).expect("explored plan matches graph shape");
        debug_assert!(bd.fits(tiers));
        let better = match best {
            None => true,
            Some((overhead, persistent, _)) => {
                bd.total_overhead_ms < *overhead
                    || (bd.total_overhead_ms == *overhead && bd.persistent_gpu_bytes < *persistent)
            }
        };
        if better {
            *best = Some((bd.total_overhead_ms, bd.persistent_gpu_bytes, plan.clone()));
        }
        return;
    }
    if op == graph.segments[seg].interiors.len() {
        explore_interiors(graph, tiers, plan, seg + 1, 0, gpu, cpu, disk, best);
        return;
    }
    let size = graph.segments[seg].interiors[op].act_bytes;
    for choice in INTERIOR_CHOICES {
        let (g, c, d) = match choice {
            InteriorPlacement::Recompute => (gpu, cpu, disk),
            InteriorPlacement::SaveGpu => (gpu + size, cpu, disk),
            InteriorPlacement::SaveCpu => (gpu, cpu + size, disk),
            InteriorPlacement::SaveDisk => (gpu, cpu, disk + size),
        };
        if g + graph.transient_gpu_bytes() > tiers.gpu_capacity_bytes
            || c > tiers.cpu_capacity_bytes
            || d > tiers.disk_capacity_bytes
        {
            continue;
        }
        plan.interiors[seg][op] = choice;
        explore_interiors(graph, tiers, plan, seg, op + 1, g, c, d, best);
    }
    plan.interiors[seg][op] = InteriorPlacement::Recompute;
}

/// Density-guided heuristic planner.
///
/// Starts from the zero-activation plan (spilling the largest inputs to
/// disk if CPU capacity is short), then upgrades interiors in order of
/// recompute savings per byte to the first tier of GPU, CPU, disk that fits
/// and strictly lowers evaluated overhead; compute-bound ops win density
/// ties. Finally inputs move back to GPU, smallest first, while capacity
/// allows and overhead does not rise. Never returns a plan worse than the
/// vanilla plan when that plan fits the budgets.
pub fn plan_greedy(graph: &SegmentGraph, tiers: &TierSpec) -> Result<CheckpointPlan, AcError> {
    graph.validate()?;
    tiers.validate()?;
    if graph.transient_gpu_bytes() > tiers.gpu_capacity_bytes {
        return Err(AcError::Infeasible);
    }

    // Seed with the zero-activation layout. Inputs overflowing the CPU
    // budget spill largest-first to disk, then to the GPU, so the seed is
    // feasible whenever the vanilla plan is.
    let mut plan = zero_activation_plan(graph);
    let mut cpu: u64 = graph.segments.iter().map(|s| s.input_bytes).sum();
    if cpu > tiers.cpu_capacity_bytes {
        let mut by_size: Vec<usize> = (0..graph.segments.len()).collect();
        by_size.sort_by_key(|&i| (std::cmp::Reverse(graph.segments[i].input_bytes), i));
        let mut disk: u64 = 0;
        let gpu_budget = tiers.gpu_capacity_bytes - graph.transient_gpu_bytes();
        let mut gpu: u64 = 0;
        for i in by_size {
            if cpu <= tiers.cpu_capacity_bytes {
                break;
            }
            let size = graph.segments[i].input_bytes;
            if disk + size <= tiers.disk_capacity_bytes {
                plan.inputs[i] = InputPlacement::OffloadDisk;
                disk += size;
            } else if gpu + size <= gpu_budget {
                plan.inputs[i] = InputPlacement::KeepGpu;
                gpu += size;
            } else {
                return Err(AcError::Infeasible);
            }
            cpu -= size;
        }
    }
    let mut current = evaluate_plan(graph, tiers, &plan)?;
    debug_assert!(current.fits(tiers));

    // (segment, op) indices ranked by recompute savings per byte.
    let mut ranked: Vec<(usize, usize)> = Vec::new();
    for (i, seg) in graph.segments.iter().enumerate() {
        for j in 0..seg.interiors.len() {
            ranked.push((i, j));
        }
    }
    let density = |&(i, j): &(usize, usize)| -> f64 {
        let op = &graph.segments[i].interiors[j];
        if op.act_bytes == 0 {
            if op.cost_ms > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            op.cost_ms / op.act_bytes as f64
        }
    };
    ranked.sort_by(|a, b| {
        density(b).total_cmp(&density(a)).then_with(|| {
            let (ca, cb) = (
                graph.segments[a.0].interiors[a.1].compute_bound,
                graph.segments[b.0].interiors[b.1].compute_bound,
            );
            cb.cmp(&ca).then(a.cmp(b))
        })
    });

    for (i, j) in ranked {
        for tier in [
            InteriorPlacement::SaveGpu,
            InteriorPlacement::SaveCpu,
            InteriorPlacement::SaveDisk,
        ] {
            plan.interiors[i][j] = tier;
            let bd = evaluate_plan(graph, tiers, &plan)?;
            if bd.fits(tiers) && bd.total_overhead_ms < current.total_overhead_ms {
                current = bd;
                break;
            }
            plan.interiors[i][j] = InteriorPlacement::Recompute;
        }
    }

    let mut inputs_by_size: Vec<usize> = (0..graph.segments.len()).collect();
    inputs_by_size.sort_by_key(|&i| (graph.segments[i].input_bytes, i));
    for i in inputs_by_size {
        let prev = plan.inputs[i];
        plan.inputs[i] = InputPlacement::KeepGpu;
        let bd = evaluate_plan(graph, tiers, &plan)?;
        if bd.fits(tiers) && bd.total_overhead_ms <= current.total_overhead_ms {
            current = bd;
        } else {
            plan.inputs[i] = prev;
        }
    }

    let vanilla = vanilla_ac_plan(graph);
    let vbd = evaluate_plan(graph, tiers, &vanilla)?;
    if vbd.fits(tiers) && vbd.total_overhead_ms < current.total_overhead_ms {
        return Ok(vanilla);
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MB: u64 = 1 << 20;

    // Two segments: A(10 ms, 200 MB, compute) and B(2 ms, 200 MB, io) feed
    // the first backward (12 ms); C(8 ms, 150 MB, compute) feeds the
    // second (8 ms). Inputs are 100 MB each.
    fn worked_graph() -> SegmentGraph {
        SegmentGraph {
            segments: vec![
                Segment {
                    input_bytes: 100 * MB,
                    backward_ms: 12.0,
                    interiors: vec![
                        InteriorOp {
                            cost_ms: 10.0,
                            act_bytes: 200 * MB,
                            compute_bound: true,
                        },
                        InteriorOp {
                            cost_ms: 2.0,
                            act_bytes: 200 * MB,
                            compute_bound: false,
                        },
                    ],
                },
                Segment {
                    input_bytes: 100 * MB,
                    backward_ms: 8.0,
                    interiors: vec![InteriorOp {
                        cost_ms: 8.0,
                        act_bytes: 150 * MB,
                        compute_bound: true,
                    }],
                },
            ],
        }
    }

    fn roomy_tiers() -> TierSpec {
        TierSpec {
            gpu_capacity_bytes: 100_000 * MB,
            cpu_capacity_bytes: 100_000 * MB,
            disk_capacity_bytes: 100_000 * MB,
            cpu_offload_bw: 100.0 * MB as f64,
            cpu_prefetch_bw: 100.0 * MB as f64,
            disk_offload_bw: 10.0 * MB as f64,
            disk_prefetch_bw: 10.0 * MB as f64,
        }
    }

    // Capacities stay roomy but every transfer is too slow to hide.
    fn slow_tiers() -> TierSpec {
        TierSpec {
            cpu_offload_bw: 0.1 * MB as f64,
            cpu_prefetch_bw: 0.1 * MB as f64,
            disk_offload_bw: 0.01 * MB as f64,
            disk_prefetch_bw: 0.01 * MB as f64,
            ..roomy_tiers()
        }
    }

    #[test]
    fn vanilla_plan_costs() {
        let g = worked_graph();
        let bd = evaluate_plan(&g, &roomy_tiers(), &vanilla_ac_plan(&g)).unwrap();
        assert_eq!(bd.recompute_ms, 20.0);
        assert_eq!(bd.persistent_gpu_bytes, 200 * MB);
        assert_eq!(bd.transient_gpu_bytes, 400 * MB);
        assert_eq!(bd.offload_stall_ms, 0.0);
        assert_eq!(bd.prefetch_stall_ms, 0.0);
        assert_eq!(bd.total_overhead_ms, 20.0);
    }

    #[test]
    fn zero_activation_has_no_persistent_gpu() {
        let g = worked_graph();
        let bd = evaluate_plan(&g, &roomy_tiers(), &zero_activation_plan(&g)).unwrap();
        assert_eq!(bd.persistent_gpu_bytes, 0);
        assert_eq!(bd.cpu_bytes, 200 * MB);
    }

    #[test]
    fn saving_one_interior_reduces_recompute() {
        let g = worked_graph();
        let mut plan = vanilla_ac_plan(&g);
        plan.interiors[0][0] = InteriorPlacement::SaveGpu;
        let bd = evaluate_plan(&g, &roomy_tiers(), &plan).unwrap();
        assert_eq!(bd.recompute_ms, 10.0);
        assert_eq!(bd.persistent_gpu_bytes, 400 * MB);
    }

    #[test]
    fn stall_is_transfer_time_minus_window() {
        let g = worked_graph();
        let tiers = TierSpec {
            cpu_offload_bw: 10.0 * MB as f64,
            cpu_prefetch_bw: 10.0 * MB as f64,
            ..roomy_tiers()
        };
        let mut plan = vanilla_ac_plan(&g);
        plan.inputs[0] = InputPlacement::OffloadCpu;
        let bd = evaluate_plan(&g, &tiers, &plan).unwrap();
        // Offload: 100 MB at 10 MB/ms = 10 ms against segment 2's 8 ms of
        // forward compute. Prefetch window is segment 2's backward plus its
        // recompute: 8 + 8 = 16 ms, enough to hide the 10 ms transfer.
        assert_eq!(bd.offload_stall_ms, 2.0);
        assert_eq!(bd.prefetch_stall_ms, 0.0);

        // The last segment's input has no later compute to hide behind.
        let mut plan = vanilla_ac_plan(&g);
        plan.inputs[1] = InputPlacement::OffloadCpu;
        let bd = evaluate_plan(&g, &tiers, &plan).unwrap();
        assert_eq!(bd.offload_stall_ms, 10.0);
        assert_eq!(bd.prefetch_stall_ms, 10.0);
    }

    #[test]
    fn saved_interiors_widen_no_windows_but_recompute_does() {
        // Prefetch windows include later segments' recompute work, so
        // saving segment 2's interior shrinks segment 1's window.
        let g = worked_graph();
        let tiers = TierSpec {
            cpu_offload_bw: 100.0 * MB as f64,
            cpu_prefetch_bw: 10.0 * MB as f64,
            ..roomy_tiers()
        };
        let mut plan = vanilla_ac_plan(&g);
        plan.inputs[0] = InputPlacement::OffloadCpu;
        let with_recompute = evaluate_plan(&g, &tiers, &plan).unwrap();
        plan.interiors[1][0] = InteriorPlacement::SaveGpu;
        let with_save = evaluate_plan(&g, &tiers, &plan).unwrap();
        assert_eq!(with_recompute.prefetch_stall_ms, 0.0);
        // Window shrank from 16 ms to 8 ms; the 10 ms transfer now stalls.
        assert_eq!(with_save.prefetch_stall_ms, 2.0);
        assert!(with_save.recompute_ms < with_recompute.recompute_ms);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let g = worked_graph();
        let mut plan = vanilla_ac_plan(&g);
        plan.interiors[0].pop();
        assert!(matches!(
            evaluate_plan(&g, &roomy_tiers(), &plan),
            Err(AcError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn exact_saves_everything_when_memory_is_free_but_transfers_stall() {
        let g = worked_graph();
        let plan = plan_exact(&g, &slow_tiers()).unwrap();
        assert_eq!(plan.inputs, vec![InputPlacement::KeepGpu; 2]);
        for d in plan.interiors.iter().flatten() {
            assert_eq!(*d, InteriorPlacement::SaveGpu);
        }
        let bd = evaluate_plan(&g, &slow_tiers(), &plan).unwrap();
        assert_eq!(bd.total_overhead_ms, 0.0);
    }

    #[test]
    fn exact_respects_zero_persistent_budget() {
        let g = worked_graph();
        let tiers = TierSpec {
            gpu_capacity_bytes: g.transient_gpu_bytes(),
            ..roomy_tiers()
        };
        let plan = plan_exact(&g, &tiers).unwrap();
        let bd = evaluate_plan(&g, &tiers, &plan).unwrap();
        assert_eq!(bd.persistent_gpu_bytes, 0);
        assert!(plan.inputs.iter().all(|p| *p != InputPlacement::KeepGpu));
    }

    #[test]
    fn exact_reports_infeasible_below_transient_floor() {
        let g = worked_graph();
        let tiers = TierSpec {
            gpu_capacity_bytes: g.transient_gpu_bytes() - 1,
            ..roomy_tiers()
        };
        assert_eq!(plan_exact(&g, &tiers), Err(AcError::Infeasible));
    }

    #[test]
    fn exact_enforces_slot_cap() {
        let g = worked_graph();
        assert!(matches!(
            plan_exact_with_cap(&g, &roomy_tiers(), 4),
            Err(AcError::TooManySlots { slots: 5, cap: 4 })
        ));
    }

    #[test]
    fn greedy_upgrades_by_density() {
        // GPU has room for exactly one saved interior, so the highest
        // density op (C: 8 ms / 150 MB) wins the slot; the runner-up A
        // falls through to CPU and B finds no tier left.
        let g = worked_graph();
        let tiers = TierSpec {
            gpu_capacity_bytes: g.transient_gpu_bytes() + 150 * MB,
            cpu_capacity_bytes: 400 * MB,
            disk_capacity_bytes: 0,
            ..roomy_tiers()
        };
        let plan = plan_greedy(&g, &tiers).unwrap();
        assert_eq!(plan.interiors[1][0], InteriorPlacement::SaveGpu);
        assert_eq!(plan.interiors[0][0], InteriorPlacement::SaveCpu);
        assert_eq!(plan.interiors[0][1], InteriorPlacement::Recompute);
    }

    #[test]
    fn greedy_with_free_memory_saves_all_interiors() {
        let g = worked_graph();
        let plan = plan_greedy(&g, &roomy_tiers()).unwrap();
        for d in plan.interiors.iter().flatten() {
            assert_eq!(*d, InteriorPlacement::SaveGpu);
        }
        let bd = evaluate_plan(&g, &roomy_tiers(), &plan).unwrap();
        assert_eq!(bd.total_overhead_ms, 0.0);
    }

    #[test]
    fn greedy_keeps_zero_activation_plan_when_nothing_fits() {
        let g = worked_graph();
        let tiers = TierSpec {
            gpu_capacity_bytes: g.transient_gpu_bytes(),
            cpu_capacity_bytes: 200 * MB,
            disk_capacity_bytes: 0,
            ..roomy_tiers()
        };
        let plan = plan_greedy(&g, &tiers).unwrap();
        assert_eq!(plan, zero_activation_plan(&g));
    }

    #[test]
    fn greedy_spills_inputs_to_disk_when_cpu_is_short() {
        let g = worked_graph();
        let tiers = TierSpec {
            gpu_capacity_bytes: g.transient_gpu_bytes(),
            cpu_capacity_bytes: 100 * MB,
            disk_capacity_bytes: 100 * MB,
            ..roomy_tiers()
        };
        let plan = plan_greedy(&g, &tiers).unwrap();
        let bd = evaluate_plan(&g, &tiers, &plan).unwrap();
        assert!(bd.fits(&tiers));
        assert_eq!(bd.disk_bytes, 100 * MB);
    }

    #[test]
    fn greedy_is_infeasible_when_inputs_overflow_both_tiers() {
        let g = worked_graph();
        let tiers = TierSpec {
            gpu_capacity_bytes: g.transient_gpu_bytes(),
            cpu_capacity_bytes: 100 * MB,
            disk_capacity_bytes: 50 * MB,
            ..roomy_tiers()
        };
        assert_eq!(plan_greedy(&g, &tiers), Err(AcError::Infeasible));
    }

    #[test]
    fn greedy_never_saves_a_cheap_huge_io_op() {
        let g = SegmentGraph {
            segments: vec![Segment {
                input_bytes: 0,
                backward_ms: 1.0,
                interiors: vec![InteriorOp {
                    cost_ms: 0.001,
                    act_bytes: 4000 * MB,
                    compute_bound: false,
                }],
            }],
        };
        // GPU cannot hold it persistently; CPU/disk transfers stall far
        // longer than the 1 us recompute.
        let tiers = TierSpec {
            gpu_capacity_bytes: g.transient_gpu_bytes(),
            ..roomy_tiers()
        };
        let plan = plan_greedy(&g, &tiers).unwrap();
        assert_eq!(plan.interiors[0][0], InteriorPlacement::Recompute);
    }

    fn random_graph(rng: &mut impl rand::Rng, max_slots: usize) -> SegmentGraph {
        let n_segs = rng.gen_range(1..4usize);
        let mut remaining = max_slots.saturating_sub(n_segs);
        let segments = (0..n_segs)
            .map(|_| {
                let n_ops = rng.gen_range(0..=remaining.min(3));
                remaining -= n_ops;
                Segment {
                    input_bytes: rng.gen_range(0..300) * MB,
                    backward_ms: rng.gen_range(0.0..20.0),
                    interiors: (0..n_ops)
                        .map(|_| InteriorOp {
                            cost_ms: rng.gen_range(0.0..15.0),
                            act_bytes: rng.gen_range(0..250) * MB,
                            compute_bound: rng.gen_bool(0.5),
                        })
                        .collect(),
                }
            })
            .collect();
        SegmentGraph { segments }
    }

    fn random_tiers(rng: &mut impl rand::Rng) -> TierSpec {
        TierSpec {
            gpu_capacity_bytes: rng.gen_range(0..2000) * MB,
            cpu_capacity_bytes: rng.gen_range(0..2000) * MB,
            disk_capacity_bytes: rng.gen_range(0..4000) * MB,
            cpu_offload_bw: rng.gen_range(1.0..200.0) * MB as f64,
            cpu_prefetch_bw: rng.gen_range(1.0..200.0) * MB as f64,
            disk_offload_bw: rng.gen_range(0.1..50.0) * MB as f64,
            disk_prefetch_bw: rng.gen_range(0.1..50.0) * MB as f64,
        }
    }

    #[test]
    fn vanilla_properties_hold_on_random_graphs() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let g = random_graph(&mut rng, 9);
            let bd = evaluate_plan(&g, &roomy_tiers(), &vanilla_ac_plan(&g)).unwrap();
            let all_costs: f64 = g
                .segments
                .iter()
                .map(|s| s.interiors.iter().map(|op| op.cost_ms).sum::<f64>())
                .sum();
            assert_eq!(bd.recompute_ms, all_costs);
            assert_eq!(bd.offload_stall_ms + bd.prefetch_stall_ms, 0.0);
            let zbd = evaluate_plan(&g, &roomy_tiers(), &zero_activation_plan(&g)).unwrap();
            assert_eq!(zbd.persistent_gpu_bytes, 0);
        }
    }

    #[test]
    fn greedy_is_feasible_and_beats_vanilla_when_it_returns() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let g = random_graph(&mut rng, 8);
            let tiers = random_tiers(&mut rng);
            let Ok(plan) = plan_greedy(&g, &tiers) else {
                continue;
            };
            let bd = evaluate_plan(&g, &tiers, &plan).unwrap();
            assert!(bd.fits(&tiers));
            let vbd = evaluate_plan(&g, &tiers, &vanilla_ac_plan(&g)).unwrap();
            if vbd.fits(&tiers) {
                assert!(bd.total_overhead_ms <= vbd.total_overhead_ms);
            }
        }
    }

    #[test]
    fn widening_budgets_never_hurts_the_exact_plan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mut compared = 0;
        for _ in 0..60 {
            let g = random_graph(&mut rng, 6);
            let tiers = random_tiers(&mut rng);
            let Ok(plan) = plan_exact(&g, &tiers) else {
                continue;
            };
            let base = evaluate_plan(&g, &tiers, &plan).unwrap().total_overhead_ms;
            let mut wide = tiers;
            match rng.gen_range(0..3) {
                0 => wide.gpu_capacity_bytes += 512 * MB,
                1 => wide.cpu_capacity_bytes += 512 * MB,
                _ => wide.disk_capacity_bytes += 512 * MB,
            }
            let wider = plan_exact(&g, &wide).unwrap();
            let improved = evaluate_plan(&g, &wide, &wider).unwrap().total_overhead_ms;
            assert!(improved <= base);
            compared += 1;
        }
        assert!(compared > 10, "too few feasible instances ({compared})");
    }

    #[test]
    fn plan_json_round_trip() {
        let g = worked_graph();
        let plan = vanilla_ac_plan(&g);
        let js = serde_json::to_string(&plan).unwrap();
        assert!(js.contains("keep_gpu") && js.contains("recompute"));
        let back: CheckpointPlan = serde_json::from_str(&js).unwrap();
        assert_eq!(back, plan);
        let gjs = serde_json::to_string(&g).unwrap();
        assert!(gjs.contains("input_bytes") && gjs.contains("act_bytes"));
        let gback: SegmentGraph = serde_json::from_str(&gjs).unwrap();
        assert_eq!(gback, g);
    }
}
