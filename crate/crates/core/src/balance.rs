//! Per-batch load balancing across ranks.
//!
//! Samples arrive wherever the dataloader put them; long-context batches
//! then leave some ranks idle while a straggler finishes. This module
//! computes a greedy (longest-processing-time) assignment over estimated
//! runtimes and the minimal exchange plan realizing it. Balancing never
//! crosses a batch boundary.
//!
//! Deviation worth knowing: when the origin layout already beats the greedy
//! assignment (LPT is a 4/3-approximation, not optimal), the planner keeps
//! the origin layout and emits an empty exchange, so a balance step never
//! makes a batch slower.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::{RuntimeTable, SampleSpec};

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("samples span multiple batch ids ({0} and {1})")]
    MixedBatchIds(u64, u64),
    #[error("num_ranks must be at least 1")]
    ZeroRanks,
    #[error("sample {id} has origin_rank {origin_rank}, but there are {num_ranks} ranks")]
    OriginRankOutOfRange {
        id: u64,
        origin_rank: usize,
        num_ranks: usize,
    },
    #[error("total load is zero")]
    ZeroTotalLoad,
    #[error("sample {0} not present in layout")]
    UnknownSample(u64),
    #[error("sample {id} is on rank {actual}, not {from_rank}")]
    SampleNotOnFromRank {
        id: u64,
        from_rank: usize,
        actual: usize,
    },
    #[error("rank {0} out of range")]
    RankOutOfRange(usize),
    #[error("batch of {len} samples exceeds oracle cap {cap}")]
    BatchTooLargeForOracle { len: usize, cap: usize },
}

/// Where every sample of one batch should run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankAssignment {
    /// Sample ids per rank, ascending by id.
    pub per_rank: Vec<Vec<u64>>,
    /// Total estimated milliseconds per rank.
    pub estimated_load: Vec<f64>,
}

impl RankAssignment {
    pub fn makespan(&self) -> f64 {
        self.estimated_load.iter().cloned().fold(0.0, f64::max)
    }

    pub fn imbalance_ratio(&self) -> Result<f64, BalanceError> {
        let total: f64 = self.estimated_load.iter().sum();
        if total <= 0.0 {
            return Err(BalanceError::ZeroTotalLoad);
        }
        let mean = total / self.estimated_load.len() as f64;
        Ok(self.makespan() / mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeMove {
    pub sample_id: u64,
    pub from_rank: usize,
    pub to_rank: usize,
}

/// The sample moves that turn the origin layout into the assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangePlan {
    pub moves: Vec<ExchangeMove>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub batch_id: u64,
    pub assignment: RankAssignment,
    pub exchange: ExchangePlan,
}

fn check_batch(batch: &[SampleSpec], num_ranks: usize) -> Result<u64, BalanceError> {
    if num_ranks == 0 {
        return Err(BalanceError::ZeroRanks);
    }
    let first = batch.first().ok_or(BalanceError::EmptyBatch)?;
    for s in batch {
        if s.batch_id != first.batch_id {
            return Err(BalanceError::MixedBatchIds(first.batch_id, s.batch_id));
        }
        if s.origin_rank >= num_ranks {
            return Err(BalanceError::OriginRankOutOfRange {
                id: s.id,
                origin_rank: s.origin_rank,
                num_ranks,
            });
        }
    }
    Ok(first.batch_id)
}

/// Groups a batch by origin rank, each rank's list ascending by id.
pub fn origin_layout(batch: &[SampleSpec], num_ranks: usize) -> Vec<Vec<u64>> {
    let mut layout = vec![Vec::new(); num_ranks];
    let mut sorted: Vec<&SampleSpec> = batch.iter().collect();
    sorted.sort_by_key(|s| s.id);
    for s in sorted {
        layout[s.origin_rank].push(s.id);
    }
    layout
}

fn assignment_from_layout(layout: Vec<Vec<u64>>, score_of: &HashMap<u64, f64>) -> RankAssignment {
    let estimated_load = layout
        .iter()
        .map(|ids| ids.iter().map(|id| score_of[id]).sum())
        .collect();
    RankAssignment {
        per_rank: layout,
        estimated_load,
    }
}

/// Plans a balance step using table-estimated runtimes as the load metric.
pub fn plan_balance(
    batch: &[SampleSpec],
    table: &RuntimeTable,
    num_ranks: usize,
) -> Result<BalancePlan, BalanceError> {
    plan_balance_by(batch, num_ranks, |s| table.estimate_runtime(s.seqlen))
}

/// Plans a balance step under an arbitrary per-sample load score.
///
/// LPT greedy: samples sorted by score descending (ties: smaller id first),
/// each assigned to the rank with the smallest accumulated load (ties:
/// smallest rank index). A relabeling pass then swaps equal-score samples
/// between ranks so as many as possible stay on their origin rank; this
/// changes move count, never loads. Falls back to the origin layout when
/// that layout's makespan is strictly smaller than the greedy one.
pub fn plan_balance_by<F>(
    batch: &[SampleSpec],
    num_ranks: usize,
    score: F,
) -> Result<BalancePlan, BalanceError>
where
    F: Fn(&SampleSpec) -> f64,
{
    let batch_id = check_batch(batch, num_ranks)?;
    let score_of: HashMap<u64, f64> = batch.iter().map(|s| (s.id, score(s))).collect();

    let mut order: Vec<&SampleSpec> = batch.iter().collect();
    order.sort_by(|a, b| {
        score_of[&b.id]
            .total_cmp(&score_of[&a.id])
            .then(a.id.cmp(&b.id))
    });

    // LPT pass: record, per rank, how many samples of each score it takes.
    let mut loads = vec![0.0f64; num_ranks];
    // score bits -> per-rank slot count, plus the group's member samples.
    let mut groups: HashMap<u64, (Vec<usize>, Vec<&SampleSpec>)> = HashMap::new();
    let mut group_order: Vec<u64> = Vec::new();
    for s in &order {
        let rank = min_load_rank(&loads);
        let v = score_of[&s.id];
        loads[rank] += v;
        let entry = groups.entry(v.to_bits()).or_insert_with(|| {
            group_order.push(v.to_bits());
            (vec![0; num_ranks], Vec::new())
        });
        entry.0[rank] += 1;
        entry.1.push(s);
    }

    // Relabel pass: within each equal-score group, fill origin-rank slots
    // first, then distribute the rest by ascending id and rank.
    let mut layout: Vec<Vec<u64>> = vec![Vec::new(); num_ranks];
    for bits in group_order {
        let (mut need, members) = groups.remove(&bits).unwrap();
        let mut leftovers: Vec<u64> = Vec::new();
        for s in members {
            if need[s.origin_rank] > 0 {
                need[s.origin_rank] -= 1;
                layout[s.origin_rank].push(s.id);
            } else {
                leftovers.push(s.id);
            }
        }
        leftovers.sort_unstable();
        let mut next = leftovers.into_iter();
        for (rank, slots) in need.into_iter().enumerate() {
            for _ in 0..slots {
                layout[rank].push(next.next().unwrap());
            }
        }
    }
    for ids in &mut layout {
        ids.sort_unstable();
    }
    let greedy = assignment_from_layout(layout, &score_of);

    let origin = assignment_from_layout(origin_layout(batch, num_ranks), &score_of);
    let chosen = if origin.makespan() < greedy.makespan() {
        origin
    } else {
        greedy
    };

    let mut moves = Vec::new();
    let origin_of: HashMap<u64, usize> = batch.iter().map(|s| (s.id, s.origin_rank)).collect();
    for (rank, ids) in chosen.per_rank.iter().enumerate() {
        for &id in ids {
            let from = origin_of[&id];
            if from != rank {
                moves.push(ExchangeMove {
                    sample_id: id,
                    from_rank: from,
                    to_rank: rank,
                });
            }
        }
    }
    moves.sort_by_key(|m| m.sample_id);

    Ok(BalancePlan {
        batch_id,
        assignment: chosen,
        exchange: ExchangePlan { moves },
    })
}

fn min_load_rank(loads: &[f64]) -> usize {
    let mut best = 0;
    for (r, &l) in loads.iter().enumerate().skip(1) {
        if l < loads[best] {
            best = r;
        }
    }
    best
}

/// Applies an exchange plan to a per-rank layout.
pub fn apply_exchange(
    layout: &[Vec<u64>],
    plan: &ExchangePlan,
) -> Result<Vec<Vec<u64>>, BalanceError> {
    let mut out: Vec<Vec<u64>> = layout.to_vec();
    for m in &plan.moves {
        if m.from_rank >= out.len() {
            return Err(BalanceError::RankOutOfRange(m.from_rank));
        }
        if m.to_rank >= out.len() {
            return Err(BalanceError::RankOutOfRange(m.to_rank));
        }
        match out[m.from_rank].iter().position(|&id| id == m.sample_id) {
            Some(pos) => {
                out[m.from_rank].remove(pos);
                out[m.to_rank].push(m.sample_id);
            }
            None => {
                let actual = out
                    .iter()
                    .position(|ids| ids.contains(&m.sample_id))
                    .ok_or(BalanceError::UnknownSample(m.sample_id))?;
                return Err(BalanceError::SampleNotOnFromRank {
                    id: m.sample_id,
                    from_rank: m.from_rank,
                    actual,
                });
            }
        }
    }
    Ok(out)
}

pub const DEFAULT_ORACLE_CAP: usize = 14;

/// Exact minimum makespan by branch-and-bound over all assignments.
///
/// Intended as a test oracle; refuses batches above the cap.
pub fn optimal_makespan(
    batch: &[SampleSpec],
    table: &RuntimeTable,
    num_ranks: usize,
) -> Result<f64, BalanceError> {
    optimal_makespan_with_cap(batch, table, num_ranks, DEFAULT_ORACLE_CAP)
}

pub fn optimal_makespan_with_cap(
    batch: &[SampleSpec],
    table: &RuntimeTable,
    num_ranks: usize,
    cap: usize,
) -> Result<f64, BalanceError> {
    check_batch(batch, num_ranks)?;
    if batch.len() > cap {
        return Err(BalanceError::BatchTooLargeForOracle {
            len: batch.len(),
            cap,
        });
    }
    let mut runtimes: Vec<f64> = batch
        .iter()
        .map(|s| table.estimate_runtime(s.seqlen))
        .collect();
    runtimes.sort_by(|a, b| b.total_cmp(a));

    // Seed the bound with the greedy solution; it is always achievable.
    let greedy = plan_balance(batch, table, num_ranks)?;
    let mut best = greedy.assignment.makespan();
    let mut loads = vec![0.0f64; num_ranks];
    descend(&runtimes, 0, &mut loads, 0.0, &mut best);
    Ok(best)
}

fn descend(runtimes: &[f64], i: usize, loads: &mut Vec<f64>, current_max: f64, best: &mut f64) {
    if i == runtimes.len() {
        if current_max < *best {
            *best = current_max;
        }
        return;
    }
    if current_max >= *best {
        return;
    }
    // Ranks with equal load lead to identical subtrees; try one of each.
    let mut tried: Vec<u64> = Vec::with_capacity(loads.len());
    for r in 0..loads.len() {
        let bits = loads[r].to_bits();
        if tried.contains(&bits) {
            continue;
        }
        tried.push(bits);
        let new_load = loads[r] + runtimes[i];
        if new_load >= *best {
            continue;
        }
        loads[r] = new_load;
        descend(runtimes, i + 1, loads, current_max.max(new_load), best);
        loads[r] = new_load - runtimes[i];
    }
}
