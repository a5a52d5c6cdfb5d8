//! Snapshot management and crash-resume for simulated training runs.
//!
//! Training state is fingerprinted by digest chains rather than tensors, so
//! resume correctness stays falsifiable: a resumed run must land on exactly
//! the digest a fault-free run produces. Snapshots publish atomically (temp
//! write, then rename, with the checksum sidecar as commit point), so a
//! reader never observes a torn record.
//!
//! The failure harness replays a trace step by step, snapshotting every
//! `snapshot_every` steps plus a step-0 baseline. A crash event charges the
//! failed attempt's full cost, restores the newest valid snapshot, and
//! re-executes from there. Planner stalls of redone attempts are modeled on
//! logical batch adjacency, identical to the original attempt, which keeps
//! the overhead of a crash exactly the cost of its redone steps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::runtime::RuntimeTable;
use crate::sim::{
    execute_step, fold_step_digests, initial_model_digest, initial_optimizer_digest,
    state_digest_hex, BatchTrace, ClusterConfig, SimError, SimReport, SimTotals, StepMetrics,
};

#[derive(Debug, Error, PartialEq)]
pub enum FaultError {
    #[error("snapshot store unwritable: {0}")]
    StoreUnwritable(String),
    #[error("failed to serialize state: {0}")]
    SerializationFailure(String),
    #[error("no valid snapshot in store")]
    NoValidSnapshot,
    #[error("{healthy} healthy nodes, {required} required")]
    InsufficientHealthyNodes { healthy: usize, required: usize },
    #[error("crash at step {step} found no snapshot to resume from")]
    UnrecoverableCrash { step: u64 },
    #[error("invalid failure schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Restorable logical training state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub model_digest: Digest,
    pub optimizer_digest: Digest,
    /// (next batch index, intra-batch offset); the offset is always 0 at
    /// step granularity.
    pub dataloader_cursor: (u64, u64),
    pub rng_state: u64,
}

impl TrainState {
    pub fn initial(rng_state: u64) -> Self {
        TrainState {
            step: 0,
            model_digest: initial_model_digest(),
            optimizer_digest: initial_optimizer_digest(),
            dataloader_cursor: (0, 0),
            rng_state,
        }
    }
}

/// One published snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotRecord {
    pub step: u64,
    pub payload: Vec<u8>,
    pub checksum: Digest,
    pub created_at: u64,
}

/// Directory-backed snapshot store: `snap_<step>.bin` payloads with
/// `snap_<step>.sum` checksum sidecars.
#[derive(Debug)]
pub struct SnapshotStore {
    dir: PathBuf,
    next_seq: u64,
}

impl SnapshotStore {
    pub fn open(dir: &Path) -> Result<Self, FaultError> {
        fs::create_dir_all(dir)
            .map_err(|e| FaultError::StoreUnwritable(format!("{}: {e}", dir.display())))?;
        let mut next_seq = 0;
        for (_, _, seq) in scan_sidecars(dir) {
            next_seq = next_seq.max(seq + 1);
        }
        Ok(SnapshotStore {
            dir: dir.to_path_buf(),
            next_seq,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Steps with a committed (sidecar present) record, ascending.
    pub fn stored_steps(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = scan_sidecars(&self.dir)
            .into_iter()
            .map(|(s, _, _)| s)
            .collect();
        steps.sort_unstable();
        steps
    }

    /// Atomically publishes a snapshot of `state`, then prunes all but the
    /// newest `retention` records. Retention below 1 is treated as 1.
    pub fn take_snapshot(
        &mut self,
        state: &TrainState,
        retention: usize,
    ) -> Result<SnapshotRecord, FaultError> {
        self.publish(state, retention, false)
    }

    // `abort_before_commit` simulates a crash after the temp files are
    // written but before the record is published.
    fn publish(
        &mut self,
        state: &TrainState,
        retention: usize,
        abort_before_commit: bool,
    ) -> Result<SnapshotRecord, FaultError> {
        let payload = serde_json::to_vec(state)
            .map_err(|e| FaultError::SerializationFailure(e.to_string()))?;
        let checksum = Digest::of(&payload);
        let created_at = self.next_seq;

        let bin = self.bin_path(state.step);
        let sum = self.sum_path(state.step);
        let bin_tmp = bin.with_extension("bin.tmp");
        let sum_tmp = sum.with_extension("sum.tmp");
        let io_err =
            |e: std::io::Error| FaultError::StoreUnwritable(format!("{}: {e}", self.dir.display()));

        fs::write(&bin_tmp, &payload).map_err(io_err)?;
        fs::write(&sum_tmp, format!("{} {created_at}\n", checksum.to_hex())).map_err(io_err)?;
        if abort_before_commit {
            return Err(FaultError::StoreUnwritable("simulated crash".into()));
        }
        fs::rename(&bin_tmp, &bin).map_err(io_err)?;
        // The sidecar rename commits the record.
        fs::rename(&sum_tmp, &sum).map_err(io_err)?;
        self.next_seq += 1;

        let mut steps = self.stored_steps();
        steps.reverse();
        for old in steps.into_iter().skip(retention.max(1)) {
            let _ = fs::remove_file(self.sum_path(old));
            let _ = fs::remove_file(self.bin_path(old));
        }

        Ok(SnapshotRecord {
            step: state.step,
            payload,
            checksum,
            created_at,
        })
    }

    /// Returns the highest-step record that verifies; corrupt or torn
    /// records are skipped.
    pub fn restore_latest(&self) -> Result<TrainState, FaultError> {
        let mut records = scan_sidecars(&self.dir);
        records.sort_by_key(|&(step, _, _)| std::cmp::Reverse(step));
        for (step, expected, _) in records {
            let Ok(payload) = fs::read(self.bin_path(step)) else {
                continue;
            };
            if Digest::of(&payload) != expected {
                continue;
            }
            if let Ok(state) = serde_json::from_slice::<TrainState>(&payload) {
                return Ok(state);
            }
        }
        Err(FaultError::NoValidSnapshot)
    }

    fn bin_path(&self, step: u64) -> PathBuf {
        self.dir.join(format!("snap_{step}.bin"))
    }

    fn sum_path(&self, step: u64) -> PathBuf {
        self.dir.join(format!("snap_{step}.sum"))
    }
}

fn scan_sidecars(dir: &Path) -> Vec<(u64, Digest, u64)> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(step) = name
            .strip_prefix("snap_")
            .and_then(|rest| rest.strip_suffix(".sum"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        let Ok(text) = fs::read_to_string(entry.path()) else {
            continue;
        };
        let mut fields = text.split_whitespace();
        let Some(digest) = fields.next().and_then(Digest::from_hex) else {
            continue;
        };
        let seq = fields.next().and_then(|s| s.parse().ok()).unwrap_or(0);
        out.push((step, digest, seq));
    }
    out
}

// ── Failure schedules and health gating ─────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashEvent {
    /// 1-based step at which the crash strikes; each event fires once.
    pub step: u64,
    pub rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSchedule {
    #[serde(default)]
    pub pre_launch_faulty: BTreeSet<u64>,
    #[serde(default)]
    pub crashes: Vec<CrashEvent>,
}

impl FailureSchedule {
    pub fn validate(&self, num_ranks: usize) -> Result<(), FaultError> {
        for c in &self.crashes {
            if c.step == 0 {
                return Err(FaultError::InvalidSchedule(
                    "crash steps are 1-based".into(),
                ));
            }
            if c.rank >= num_ranks {
                return Err(FaultError::InvalidSchedule(format!(
                    "crash rank {} out of range for {} ranks",
                    c.rank, num_ranks
                )));
            }
        }
        Ok(())
    }
}

/// Filters out pre-launch faulty nodes; errors when fewer than `min_nodes`
/// healthy nodes remain.
pub fn health_check(
    nodes: &[u64],
    schedule: &FailureSchedule,
    min_nodes: usize,
) -> Result<Vec<u64>, FaultError> {
    let healthy: Vec<u64> = nodes
        .iter()
        .copied()
        .filter(|n| !schedule.pre_launch_faulty.contains(n))
        .collect();
    if healthy.len() < min_nodes {
        return Err(FaultError::InsufficientHealthyNodes {
            healthy: healthy.len(),
            required: min_nodes,
        });
    }
    Ok(healthy)
}

const SNAPSHOT_RETENTION: usize = 2;

/// Replays the trace under a failure schedule with periodic snapshots.
///
/// The report lists one entry per executed attempt, crashed attempts
/// included, so its wallclock reflects redone work; snapshot costs are
/// charged to the stall of the step they follow (the baseline's to the
/// first attempt). Crash events beyond the end of the trace never fire.
/// All ranks must pass the pre-launch health check.
pub fn run_with_failures(
    config: &ClusterConfig,
    trace: &BatchTrace,
    table: &RuntimeTable,
    schedule: &FailureSchedule,
    snapshot_every: u64,
    snapshot_cost_ms: f64,
    store_dir: &Path,
) -> Result<SimReport, FaultError> {
    config.validate()?;
    trace.validate()?;
    if trace.batches.is_empty() {
        return Err(SimError::EmptyTrace.into());
    }
    schedule.validate(config.num_ranks)?;
    if snapshot_every == 0 {
        return Err(FaultError::InvalidSchedule(
            "snapshot_every must be >= 1".into(),
        ));
    }
    if !snapshot_cost_ms.is_finite() || snapshot_cost_ms < 0.0 {
        return Err(FaultError::InvalidSchedule(format!(
            "snapshot_cost_ms must be finite and >= 0, got {snapshot_cost_ms}"
        )));
    }
    let ranks: Vec<u64> = (0..config.num_ranks as u64).collect();
    health_check(&ranks, schedule, config.num_ranks)?;

    let mut pending: BTreeMap<u64, VecDeque<usize>> = BTreeMap::new();
    for c in &schedule.crashes {
        pending.entry(c.step).or_default().push_back(c.rank);
    }

    let mut store = SnapshotStore::open(store_dir)?;
    let mut state = TrainState::initial(config.noise.seed);
    store.take_snapshot(&state, SNAPSHOT_RETENTION)?;

    let total_steps = trace.batches.len() as u64;
    let mut per_step: Vec<StepMetrics> = Vec::new();
    let mut wallclock = 0.0f64;
    let mut imbalance_sum = 0.0f64;
    let mut step = 1u64;

    while step <= total_steps {
        let outcome = execute_step(config, trace, table, (step - 1) as usize)?;
        let mut metrics = outcome.metrics;
        if per_step.is_empty() {
            // Baseline snapshot pause precedes the first attempt.
            metrics.planning_stall_ms += snapshot_cost_ms;
        }

        let crashed = match pending.get_mut(&step) {
            Some(queue) => queue.pop_front().is_some(),
            None => false,
        };
        if !crashed {
            let (model, optimizer) = fold_step_digests(
                &state.model_digest,
                &state.optimizer_digest,
                &outcome.canonical,
            );
            state = TrainState {
                step,
                model_digest: model,
                optimizer_digest: optimizer,
                dataloader_cursor: (step, 0),
                rng_state: state.rng_state,
            };
            if step.is_multiple_of(snapshot_every) {
                store.take_snapshot(&state, SNAPSHOT_RETENTION)?;
                metrics.planning_stall_ms += snapshot_cost_ms;
            }
        }

        per_step.push(metrics);
        wallclock += metrics.makespan_ms + metrics.planning_stall_ms + config.allreduce_ms;
        imbalance_sum += metrics.imbalance_ratio;

        if crashed {
            state = match store.restore_latest() {
                Ok(s) => s,
                Err(FaultError::NoValidSnapshot) => {
                    return Err(FaultError::UnrecoverableCrash { step })
                }
                Err(e) => return Err(e),
            };
            step = state.step + 1;
        } else {
            step += 1;
        }
    }

    let attempts = per_step.len();
    let samples = trace.total_samples();
    let useful_flops: f64 = trace
        .batches
        .iter()
        .flat_map(|b| &b.samples)
        .map(|s| config.flops_coeffs.estimate_flops(s.seqlen))
        .sum();
    if wallclock <= 0.0 {
        return Err(SimError::ZeroWallclock.into());
    }
    let capacity = config.num_ranks as f64 * config.peak_flops_per_rank * wallclock;
    let totals = SimTotals {
        wallclock_ms: wallclock,
        mean_imbalance: imbalance_sum / attempts as f64,
        throughput_samples_per_s: samples as f64 / wallclock * 1000.0,
        mfu_proxy: (useful_flops / capacity).clamp(0.0, 1.0),
    };

    Ok(SimReport {
        per_step,
        totals,
        state_digest: state_digest_hex(&state.model_digest, &state.optimizer_digest, total_steps),
    })
}
