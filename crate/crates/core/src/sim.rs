//! Deterministic trace-driven simulator of multi-rank training steps.
//!
//! Each batch is laid out across ranks (by origin or by a balancing mode),
//! every sample charges its estimated runtime adjusted for context-parallel
//! sharding, and the step costs the slowest rank plus planning stall plus
//! the all-reduce barrier. Noise, when enabled, perturbs each sample by a
//! factor derived only from (seed, sample id), so results are reproducible
//! and independent of execution order.
//!
//! Steps are pure functions of (config, trace, table, index); nothing
//! carries over between steps except the state digest chain. The fault
//! harness exploits this to re-execute steps after a restore and land on
//! bit-identical results.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{origin_layout, plan_balance_by, BalanceError};
use crate::digest::Digest;
use crate::runtime::{FlopsCoeffs, RuntimeTable, SampleSpec};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("trace has no batches")]
    EmptyTrace,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("wallclock is zero")]
    ZeroWallclock,
    #[error(transparent)]
    Balance(#[from] BalanceError),
}

/// How samples are redistributed before each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancingMode {
    /// Keep the dataloader's origin placement.
    None,
    /// Balance on raw sequence length.
    Seqlen,
    /// Balance on the quadratic flops proxy.
    Flops,
    /// Balance on calibrated runtime estimates.
    Runtime,
}

pub const ALL_MODES: [BalancingMode; 4] = [
    BalancingMode::None,
    BalancingMode::Seqlen,
    BalancingMode::Flops,
    BalancingMode::Runtime,
];

/// Planner cost, affine in batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerLatency {
    pub fixed_ms: f64,
    pub per_sample_ms: f64,
}

impl PlannerLatency {
    pub fn for_samples(&self, n: usize) -> f64 {
        self.fixed_ms + self.per_sample_ms * n as f64
    }
}

/// Deterministic per-sample runtime perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub enabled: bool,
    pub seed: u64,
    /// Relative amplitude; factors fall in [1-amplitude, 1+amplitude].
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub num_ranks: usize,
    pub balancing_mode: BalancingMode,
    /// Overlap next-batch planning with the current step.
    pub async_planning: bool,
    pub planner_latency: PlannerLatency,
    /// Context-parallel group size; divides num_ranks.
    pub cp_size: usize,
    /// All-to-all cost in ms per token per context-parallel hop.
    pub all2all_ms_per_token: f64,
    /// Per-step gradient barrier cost.
    pub allreduce_ms: f64,
    pub flops_coeffs: FlopsCoeffs,
    /// Peak throughput per rank in flops per millisecond.
    pub peak_flops_per_rank: f64,
    pub noise: NoiseSpec,
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.num_ranks == 0 {
            return bad("num_ranks must be >= 1".into());
        }
        if self.cp_size == 0 || !self.num_ranks.is_multiple_of(self.cp_size) {
            return bad(format!(
                "cp_size {} must divide num_ranks {}",
                self.cp_size, self.num_ranks
            ));
        }
        if !(0.0..=0.5).contains(&self.noise.amplitude) {
            return bad(format!(
                "noise amplitude {} outside [0, 0.5]",
                self.noise.amplitude
            ));
        }
        for (name, v) in [
            ("planner fixed_ms", self.planner_latency.fixed_ms),
            ("planner per_sample_ms", self.planner_latency.per_sample_ms),
            ("all2all_ms_per_token", self.all2all_ms_per_token),
            ("allreduce_ms", self.allreduce_ms),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !self.peak_flops_per_rank.is_finite() || self.peak_flops_per_rank <= 0.0 {
            return bad(format!(
                "peak_flops_per_rank must be > 0, got {}",
                self.peak_flops_per_rank
            ));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawSample {
    id: u64,
    seqlen: u64,
    origin_rank: usize,
}

#[derive(Serialize, Deserialize)]
struct RawBatch {
    batch_id: u64,
    samples: Vec<RawSample>,
}

/// One batch of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawBatch", into = "RawBatch")]
pub struct Batch {
    pub batch_id: u64,
    pub samples: Vec<SampleSpec>,
}

impl From<RawBatch> for Batch {
    fn from(raw: RawBatch) -> Self {
        let samples = raw
            .samples
            .into_iter()
            .map(|s| SampleSpec {
                id: s.id,
                seqlen: s.seqlen,
                origin_rank: s.origin_rank,
                batch_id: raw.batch_id,
            })
            .collect();
        Batch {
            batch_id: raw.batch_id,
            samples,
        }
    }
}

impl From<Batch> for RawBatch {
    fn from(b: Batch) -> Self {
        RawBatch {
            batch_id: b.batch_id,
            samples: b
                .samples
                .into_iter()
                .map(|s| RawSample {
                    id: s.id,
                    seqlen: s.seqlen,
                    origin_rank: s.origin_rank,
                })
                .collect(),
        }
    }
}

/// An ordered sequence of batches driving the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTrace {
    pub batches: Vec<Batch>,
}

impl BatchTrace {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut prev: Option<u64> = None;
        for (i, b) in self.batches.iter().enumerate() {
            if let Some(p) = prev {
                if b.batch_id <= p {
                    return Err(SimError::InvalidTrace(format!(
                        "batch ids must be strictly increasing ({p} then {})",
                        b.batch_id
                    )));
                }
            }
            prev = Some(b.batch_id);
            if b.samples.is_empty() {
                return Err(SimError::InvalidTrace(format!(
                    "batch {} is empty",
                    b.batch_id
                )));
            }
            let mut ids: Vec<u64> = b.samples.iter().map(|s| s.id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(SimError::InvalidTrace(format!(
                    "batch {} has duplicate sample ids",
                    b.batch_id
                )));
            }
            for s in &b.samples {
                if s.batch_id != b.batch_id {
                    return Err(SimError::InvalidTrace(format!(
                        "sample {} carries batch_id {} inside batch {} (index {i})",
                        s.id, s.batch_id, b.batch_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.batches.iter().map(|b| b.samples.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub makespan_ms: f64,
    pub idle_fraction: f64,
    pub imbalance_ratio: f64,
    pub planning_stall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimTotals {
    pub wallclock_ms: f64,
    pub mean_imbalance: f64,
    pub throughput_samples_per_s: f64,
    pub mfu_proxy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub per_step: Vec<StepMetrics>,
    pub totals: SimTotals,
    pub state_digest: String,
}

// ── Per-step execution ──────────────────────────────────────────────────

fn noise_factor(noise: &NoiseSpec, sample_id: u64) -> f64 {
    if !noise.enabled || noise.amplitude == 0.0 {
        return 1.0;
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(noise.seed ^ sample_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    1.0 - noise.amplitude + 2.0 * noise.amplitude * u
}

fn sample_actual_ms(config: &ClusterConfig, table: &RuntimeTable, s: &SampleSpec) -> f64 {
    let cp = config.cp_size as f64;
    let mut t = table.estimate_runtime(s.seqlen) / cp;
    if config.cp_size > 1 {
        t += config.all2all_ms_per_token * s.seqlen as f64 * (cp - 1.0) / cp;
    }
    t * noise_factor(&config.noise, s.id)
}

struct BatchExec {
    makespan: f64,
    idle_fraction: f64,
    imbalance_ratio: f64,
    canonical: Vec<u8>,
}

fn exec_batch(
    config: &ClusterConfig,
    table: &RuntimeTable,
    batch: &Batch,
) -> Result<BatchExec, SimError> {
    let layout = match config.balancing_mode {
        BalancingMode::None => origin_layout(&batch.samples, config.num_ranks),
        BalancingMode::Seqlen => {
            plan_balance_by(&batch.samples, config.num_ranks, |s| s.seqlen as f64)?
                .assignment
                .per_rank
        }
        BalancingMode::Flops => {
            plan_balance_by(&batch.samples, config.num_ranks, |s| {
                config.flops_coeffs.estimate_flops(s.seqlen)
            })?
            .assignment
            .per_rank
        }
        BalancingMode::Runtime => {
            let quiet = ClusterConfig {
                noise: NoiseSpec {
                    enabled: false,
                    ..config.noise
                },
                ..*config
            };
            plan_balance_by(&batch.samples, config.num_ranks, |s| {
                sample_actual_ms(&quiet, table, s)
            })?
            .assignment
            .per_rank
        }
    };

    let by_id: std::collections::HashMap<u64, &SampleSpec> =
        batch.samples.iter().map(|s| (s.id, s)).collect();
    let rank_times: Vec<f64> = layout
        .iter()
        .map(|ids| {
            ids.iter()
                .map(|id| sample_actual_ms(config, table, by_id[id]))
                .sum()
        })
        .collect();

    let makespan = rank_times.iter().cloned().fold(0.0, f64::max);
    let total: f64 = rank_times.iter().sum();
    let mean = total / config.num_ranks as f64;
    let idle_fraction = if makespan > 0.0 {
        1.0 - mean / makespan
    } else {
        0.0
    };
    let imbalance_ratio = if total > 0.0 { makespan / mean } else { 1.0 };

    let mut canonical = Vec::new();
    canonical.extend_from_slice(&batch.batch_id.to_le_bytes());
    canonical.extend_from_slice(&(config.num_ranks as u64).to_le_bytes());
    for (ids, t) in layout.iter().zip(&rank_times) {
        canonical.extend_from_slice(&(ids.len() as u64).to_le_bytes());
        for id in ids {
            canonical.extend_from_slice(&id.to_le_bytes());
        }
        canonical.extend_from_slice(&t.to_bits().to_le_bytes());
    }

    Ok(BatchExec {
        makespan,
        idle_fraction,
        imbalance_ratio,
        canonical,
    })
}

fn planning_stall(config: &ClusterConfig, batch: &Batch, prev_makespan: Option<f64>) -> f64 {
    if config.balancing_mode == BalancingMode::None {
        return 0.0;
    }
    let latency = config.planner_latency.for_samples(batch.samples.len());
    match prev_makespan {
        // The first batch has nothing to overlap with.
        None => latency,
        Some(prev) if config.async_planning => (latency - prev).max(0.0),
        Some(_) => latency,
    }
}

/// Everything the fault harness needs to account for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub metrics: StepMetrics,
    /// Bytes folded into the state digest chain for this step.
    pub canonical: Vec<u8>,
    pub sample_count: usize,
}

impl StepOutcome {
    /// Full wallclock contribution of executing this step once.
    pub fn cost_ms(&self, config: &ClusterConfig) -> f64 {
        self.metrics.makespan_ms + self.metrics.planning_stall_ms + config.allreduce_ms
    }
}

/// Executes step `index` of the trace in isolation.
///
/// Pure: the planning stall of an async step re-derives the previous
/// step's makespan from the trace, so re-executions after a restore see
/// exactly the values of the original run.
pub fn execute_step(
    config: &ClusterConfig,
    trace: &BatchTrace,
    table: &RuntimeTable,
    index: usize,
) -> Result<StepOutcome, SimError> {
    let batch = trace
        .batches
        .get(index)
        .ok_or_else(|| SimError::InvalidTrace(format!("step index {index} out of range")))?;
    let prev_makespan = if index == 0 {
        None
    } else if config.async_planning && config.balancing_mode != BalancingMode::None {
        Some(exec_batch(config, table, &trace.batches[index - 1])?.makespan)
    } else {
        // Sync stall never looks at the previous step; skip its execution.
        Some(0.0)
    };
    let e = exec_batch(config, table, batch)?;
    let stall = planning_stall(config, batch, prev_makespan);
    Ok(StepOutcome {
        metrics: StepMetrics {
            makespan_ms: e.makespan,
            idle_fraction: e.idle_fraction,
            imbalance_ratio: e.imbalance_ratio,
            planning_stall_ms: stall,
        },
        canonical: e.canonical,
        sample_count: batch.samples.len(),
    })
}

// ── Whole-trace simulation ──────────────────────────────────────────────

pub fn initial_model_digest() -> Digest {
    Digest::of(b"model:init")
}

pub fn initial_optimizer_digest() -> Digest {
    Digest::of(b"optimizer:init")
}

/// Advances the digest pair by one executed step.
pub fn fold_step_digests(model: &Digest, optimizer: &Digest, canonical: &[u8]) -> (Digest, Digest) {
    let next_model = model.chain(canonical);
    let next_optimizer = optimizer.chain(&next_model.0);
    (next_model, next_optimizer)
}

/// Fingerprint of the logical training state after `step` steps.
pub fn state_digest_hex(model: &Digest, optimizer: &Digest, step: u64) -> String {
    let mut bytes = Vec::with_capacity(72);
    bytes.extend_from_slice(&model.0);
    bytes.extend_from_slice(&optimizer.0);
    bytes.extend_from_slice(&step.to_le_bytes());
    Digest::of(&bytes).to_hex()
}

pub fn run_simulation(
    config: &ClusterConfig,
    trace: &BatchTrace,
    table: &RuntimeTable,
) -> Result<SimReport, SimError> {
    config.validate()?;
    trace.validate()?;
    if trace.batches.is_empty() {
        return Err(SimError::EmptyTrace);
    }

    let mut per_step = Vec::with_capacity(trace.batches.len());
    let mut wallclock = 0.0f64;
    let mut imbalance_sum = 0.0f64;
    let mut model = initial_model_digest();
    let mut optimizer = initial_optimizer_digest();
    let mut prev_makespan: Option<f64> = None;

    for batch in &trace.batches {
        let e = exec_batch(config, table, batch)?;
        let overlap_base = if config.async_planning {
            prev_makespan
        } else {
            prev_makespan.map(|_| 0.0)
        };
        let stall = planning_stall(config, batch, overlap_base);
        per_step.push(StepMetrics {
            makespan_ms: e.makespan,
            idle_fraction: e.idle_fraction,
            imbalance_ratio: e.imbalance_ratio,
            planning_stall_ms: stall,
        });
        wallclock += e.makespan + stall + config.allreduce_ms;
        imbalance_sum += e.imbalance_ratio;
        (model, optimizer) = fold_step_digests(&model, &optimizer, &e.canonical);
        prev_makespan = Some(e.makespan);
    }

    let steps = trace.batches.len();
    let samples = trace.total_samples();
    let totals = SimTotals {
        wallclock_ms: wallclock,
        mean_imbalance: imbalance_sum / steps as f64,
        throughput_samples_per_s: if wallclock > 0.0 {
            samples as f64 / wallclock * 1000.0
        } else {
            0.0
        },
        mfu_proxy: mfu_value(config, trace, wallclock)?,
    };
    Ok(SimReport {
        per_step,
        totals,
        state_digest: state_digest_hex(&model, &optimizer, steps as u64),
    })
}

fn mfu_value(
    config: &ClusterConfig,
    trace: &BatchTrace,
    wallclock_ms: f64,
) -> Result<f64, SimError> {
    if wallclock_ms <= 0.0 {
        return Err(SimError::ZeroWallclock);
    }
    let useful: f64 = trace
        .batches
        .iter()
        .flat_map(|b| &b.samples)
        .map(|s| config.flops_coeffs.estimate_flops(s.seqlen))
        .sum();
    let capacity = config.num_ranks as f64 * config.peak_flops_per_rank * wallclock_ms;
    Ok((useful / capacity).clamp(0.0, 1.0))
}

/// Useful flops over available flops for an already-computed report.
pub fn compute_mfu(
    report: &SimReport,
    config: &ClusterConfig,
    trace: &BatchTrace,
) -> Result<f64, SimError> {
    mfu_value(config, trace, report.totals.wallclock_ms)
}

/// Runs all four balancing modes on identical inputs.
pub fn compare_modes(
    config: &ClusterConfig,
    trace: &BatchTrace,
    table: &RuntimeTable,
) -> Result<Vec<(BalancingMode, SimReport)>, SimError> {
    ALL_MODES
        .iter()
        .map(|&mode| {
            let cfg = ClusterConfig {
                balancing_mode: mode,
                ..*config
            };
            run_simulation(&cfg, trace, table).map(|r| (mode, r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::RuntimeTable;

    fn identity_table() -> RuntimeTable {
        RuntimeTable::from_measurements(&[(1, 1.0), (1000, 1000.0)]).unwrap()
    }

    fn config(num_ranks: usize, mode: BalancingMode) -> ClusterConfig {
        ClusterConfig {
            num_ranks,
            balancing_mode: mode,
            async_planning: false,
            planner_latency: PlannerLatency {
                fixed_ms: 0.0,
                per_sample_ms: 0.0,
            },
            cp_size: 1,
            all2all_ms_per_token: 0.0,
            allreduce_ms: 0.0,
            flops_coeffs: FlopsCoeffs::new(1.0, 0.001).unwrap(),
            peak_flops_per_rank: 1.0,
            noise: NoiseSpec {
                enabled: false,
                seed: 0,
                amplitude: 0.0,
            },
        }
    }

    fn batch(batch_id: u64, seqlens: &[u64], origins: &[usize]) -> Batch {
        let samples = seqlens
            .iter()
            .zip(origins)
            .enumerate()
            .map(|(i, (&seqlen, &origin_rank))| SampleSpec {
                id: batch_id * 100 + i as u64,
                seqlen,
                origin_rank,
                batch_id,
            })
            .collect();
        Batch { batch_id, samples }
    }

    fn trace(batches: Vec<Batch>) -> BatchTrace {
        let t = BatchTrace { batches };
        t.validate().unwrap();
        t
    }

    #[test]
    fn single_rank_step_sums_runtimes() {
        let t = trace(vec![batch(0, &[3, 4, 5], &[0, 0, 0])]);
        let r = run_simulation(&config(1, BalancingMode::Runtime), &t, &identity_table()).unwrap();
        assert_eq!(r.per_step[0].makespan_ms, 12.0);
        assert_eq!(r.per_step[0].idle_fraction, 0.0);
        assert_eq!(r.totals.wallclock_ms, 12.0);
    }

    #[test]
    fn balancing_fixes_a_skewed_batch() {
        let t = trace(vec![batch(0, &[9, 7, 6, 5, 4], &[0; 5])]);
        let table = identity_table();
        let none = run_simulation(&config(2, BalancingMode::None), &t, &table).unwrap();
        let runtime = run_simulation(&config(2, BalancingMode::Runtime), &t, &table).unwrap();
        assert_eq!(none.per_step[0].makespan_ms, 31.0);
        assert_eq!(runtime.per_step[0].makespan_ms, 17.0);
        assert_eq!(none.per_step[0].imbalance_ratio, 2.0);
    }

    #[test]
    fn async_hides_planner_latency_behind_long_steps() {
        let batches: Vec<Batch> = (0..4).map(|k| batch(k, &[10, 12], &[0, 1])).collect();
        let t = trace(batches);
        let mut cfg = config(2, BalancingMode::Runtime);
        cfg.planner_latency.fixed_ms = 1.0;
        cfg.async_planning = true;
        let r = run_simulation(&cfg, &t, &identity_table()).unwrap();
        assert_eq!(r.per_step[0].planning_stall_ms, 1.0);
        for step in &r.per_step[1..] {
            assert_eq!(step.planning_stall_ms, 0.0);
        }

        cfg.async_planning = false;
        let sync = run_simulation(&cfg, &t, &identity_table()).unwrap();
        for step in &sync.per_step {
            assert_eq!(step.planning_stall_ms, 1.0);
        }
    }

    #[test]
    fn mode_none_never_pays_planner_latency() {
        let t = trace(vec![batch(0, &[5, 5], &[0, 1])]);
        let mut cfg = config(2, BalancingMode::None);
        cfg.planner_latency.fixed_ms = 100.0;
        let r = run_simulation(&cfg, &t, &identity_table()).unwrap();
        assert_eq!(r.per_step[0].planning_stall_ms, 0.0);
    }

    #[test]
    fn cp_splits_runtime_and_charges_all2all() {
        let t = trace(vec![batch(0, &[100], &[0])]);
        let mut cfg = config(2, BalancingMode::None);
        cfg.cp_size = 2;
        cfg.all2all_ms_per_token = 0.01;
        let r = run_simulation(&cfg, &t, &identity_table()).unwrap();
        // 100/2 + 0.01 * 100 * (2-1)/2 = 50.5.
        assert_eq!(r.per_step[0].makespan_ms, 50.5);
    }

    #[test]
    fn cp_one_ignores_all2all_cost() {
        let t = trace(vec![batch(0, &[50, 70], &[0, 1])]);
        let mut with_cost = config(2, BalancingMode::Runtime);
        with_cost.all2all_ms_per_token = 99.0;
        let baseline = run_simulation(&config(2, BalancingMode::Runtime), &t, &identity_table());
        let cfg_run = run_simulation(&with_cost, &t, &identity_table());
        assert_eq!(baseline.unwrap(), cfg_run.unwrap());
    }

    #[test]
    fn wallclock_is_sum_of_step_costs() {
        let batches: Vec<Batch> = (0..3).map(|k| batch(k, &[8, 3, 9], &[0, 1, 1])).collect();
        let t = trace(batches);
        let mut cfg = config(2, BalancingMode::Runtime);
        cfg.allreduce_ms = 2.0;
        cfg.planner_latency.fixed_ms = 1.0;
        let r = run_simulation(&cfg, &t, &identity_table()).unwrap();
        let sum: f64 = r
            .per_step
            .iter()
            .map(|s| s.makespan_ms + s.planning_stall_ms + cfg.allreduce_ms)
            .sum();
        assert_eq!(r.totals.wallclock_ms, sum);
    }

    #[test]
    fn mfu_worked_example() {
        // One 1000-token sample, alpha 0.038: useful flops 38. Runtime 95
        // plus 5 ms allreduce gives wallclock 100 on one rank at peak 1.
        let t = trace(vec![batch(0, &[1000], &[0])]);
        let table = RuntimeTable::from_measurements(&[(1000, 95.0)]).unwrap();
        let mut cfg = config(1, BalancingMode::None);
        cfg.flops_coeffs = FlopsCoeffs::new(0.038, 0.0).unwrap();
        cfg.allreduce_ms = 5.0;
        let r = run_simulation(&cfg, &t, &table).unwrap();
        assert_eq!(r.totals.wallclock_ms, 100.0);
        assert_eq!(r.totals.mfu_proxy, 0.38);
        assert_eq!(compute_mfu(&r, &cfg, &t).unwrap(), 0.38);
    }

    #[test]
    fn more_allreduce_means_less_mfu() {
        let batches: Vec<Batch> = (0..3)
            .map(|k| batch(k, &[40, 90, 20], &[0, 0, 1]))
            .collect();
        let t = trace(batches);
        let mut cfg = config(2, BalancingMode::Runtime);
        cfg.allreduce_ms = 1.0;
        let base = run_simulation(&cfg, &t, &identity_table()).unwrap();
        cfg.allreduce_ms = 2.0;
        let slower = run_simulation(&cfg, &t, &identity_table()).unwrap();
        assert!(slower.totals.mfu_proxy < base.totals.mfu_proxy);
    }

    #[test]
    fn compare_modes_orders_runtime_last_and_none_first() {
        let t = trace(vec![batch(0, &[9, 7, 6, 5, 4], &[0; 5])]);
        let rs = compare_modes(&config(2, BalancingMode::None), &t, &identity_table()).unwrap();
        assert_eq!(rs.len(), 4);
        assert_eq!(rs[0].0, BalancingMode::None);
        assert_eq!(rs[3].0, BalancingMode::Runtime);
    }

    #[test]
    fn uniform_seqlens_make_all_modes_equal() {
        let t = trace(vec![batch(0, &[64; 6], &[0, 0, 0, 1, 1, 1])]);
        let rs = compare_modes(&config(2, BalancingMode::None), &t, &identity_table()).unwrap();
        let makespans: Vec<f64> = rs.iter().map(|(_, r)| r.per_step[0].makespan_ms).collect();
        assert!(makespans.iter().all(|&m| m == makespans[0]));
    }

    #[test]
    fn balanced_origin_matches_runtime_mode() {
        // Origin layout {9,7} | {6,5,4} is optimal; runtime mode keeps it.
        let t = trace(vec![batch(0, &[9, 7, 6, 5, 4], &[0, 0, 1, 1, 1])]);
        let rs = compare_modes(&config(2, BalancingMode::None), &t, &identity_table()).unwrap();
        assert_eq!(
            rs[0].1.per_step[0].makespan_ms,
            rs[3].1.per_step[0].makespan_ms
        );
    }

    #[test]
    fn runtime_mode_never_worsens_noiseless_makespan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let table = identity_table();
        for _ in 0..100 {
            let ranks = rng.gen_range(1..5);
            let n = rng.gen_range(1..12);
            let seqlens: Vec<u64> = (0..n).map(|_| rng.gen_range(1..200)).collect();
            let origins: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ranks)).collect();
            let t = trace(vec![batch(0, &seqlens, &origins)]);
            let none = run_simulation(&config(ranks, BalancingMode::None), &t, &table).unwrap();
            let runtime =
                run_simulation(&config(ranks, BalancingMode::Runtime), &t, &table).unwrap();
            assert!(
                runtime.per_step[0].makespan_ms <= none.per_step[0].makespan_ms,
                "balancing worsened {seqlens:?} on {ranks} ranks"
            );
        }
    }

    #[test]
    fn async_stall_never_exceeds_sync_stall() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let table = identity_table();
        for _ in 0..60 {
            let steps = rng.gen_range(1..6);
            let batches: Vec<Batch> = (0..steps)
                .map(|k| {
                    let n = rng.gen_range(1..6);
                    let seqlens: Vec<u64> = (0..n).map(|_| rng.gen_range(1..60)).collect();
                    let origins: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
                    batch(k, &seqlens, &origins)
                })
                .collect();
            let t = trace(batches);
            let mut cfg = config(2, BalancingMode::Runtime);
            cfg.planner_latency = PlannerLatency {
                fixed_ms: rng.gen_range(0.0..20.0),
                per_sample_ms: rng.gen_range(0.0..2.0),
            };
            cfg.async_planning = true;
            let async_run = run_simulation(&cfg, &t, &table).unwrap();
            cfg.async_planning = false;
            let sync_run = run_simulation(&cfg, &t, &table).unwrap();
            let stall =
                |r: &SimReport| -> f64 { r.per_step.iter().map(|s| s.planning_stall_ms).sum() };
            assert!(stall(&async_run) <= stall(&sync_run) + 1e-12);
        }
    }

    #[test]
    fn reports_are_bit_identical_across_runs() {
        let batches: Vec<Batch> = (0..3)
            .map(|k| batch(k, &[31, 7, 90, 4], &[0, 1, 1, 0]))
            .collect();
        let t = trace(batches);
        let mut cfg = config(2, BalancingMode::Runtime);
        cfg.noise = NoiseSpec {
            enabled: true,
            seed: 1234,
            amplitude: 0.25,
        };
        let a = run_simulation(&cfg, &t, &identity_table()).unwrap();
        let b = run_simulation(&cfg, &t, &identity_table()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );

        let mut other_seed = cfg;
        other_seed.noise.seed = 99;
        let c = run_simulation(&other_seed, &t, &identity_table()).unwrap();
        assert_ne!(a.state_digest, c.state_digest);
    }

    #[test]
    fn noise_factors_stay_inside_amplitude_band() {
        let noise = NoiseSpec {
            enabled: true,
            seed: 7,
            amplitude: 0.3,
        };
        for id in 0..2000u64 {
            let f = noise_factor(&noise, id);
            assert!((0.7..=1.3).contains(&f), "factor {f} for id {id}");
        }
    }

    #[test]
    fn execute_step_matches_run_simulation() {
        let batches: Vec<Batch> = (0..4).map(|k| batch(k, &[12, 55, 8], &[1, 0, 1])).collect();
        let t = trace(batches);
        let mut cfg = config(2, BalancingMode::Runtime);
        cfg.async_planning = true;
        cfg.planner_latency.fixed_ms = 30.0;
        cfg.allreduce_ms = 1.5;
        let table = identity_table();
        let report = run_simulation(&cfg, &t, &table).unwrap();
        let mut model = initial_model_digest();
        let mut optimizer = initial_optimizer_digest();
        for (k, expect) in report.per_step.iter().enumerate() {
            let got = execute_step(&cfg, &t, &table, k).unwrap();
            assert_eq!(got.metrics, *expect);
            (model, optimizer) = fold_step_digests(&model, &optimizer, &got.canonical);
        }
        assert_eq!(state_digest_hex(&model, &optimizer, 4), report.state_digest);
    }

    #[test]
    fn config_and_trace_validation() {
        let t = trace(vec![batch(0, &[5], &[0])]);
        let mut cfg = config(4, BalancingMode::Runtime);
        cfg.cp_size = 3;
        assert!(matches!(
            run_simulation(&cfg, &t, &identity_table()),
            Err(SimError::InvalidConfig(_))
        ));

        let mut cfg = config(2, BalancingMode::Runtime);
        cfg.noise.amplitude = 0.75;
        assert!(matches!(
            run_simulation(&cfg, &t, &identity_table()),
            Err(SimError::InvalidConfig(_))
        ));

        let empty = BatchTrace { batches: vec![] };
        assert_eq!(
            run_simulation(&config(1, BalancingMode::None), &empty, &identity_table()),
            Err(SimError::EmptyTrace)
        );

        let decreasing = BatchTrace {
            batches: vec![batch(3, &[5], &[0]), batch(2, &[5], &[0])],
        };
        assert!(matches!(
            run_simulation(
                &config(1, BalancingMode::None),
                &decreasing,
                &identity_table()
            ),
            Err(SimError::InvalidTrace(_))
        ));
    }

    #[test]
    fn trace_json_round_trip_fills_batch_ids() {
        let js = r#"{"batches":[{"batch_id":7,"samples":[
            {"id":1,"seqlen":128,"origin_rank":0},
            {"id":2,"seqlen":256,"origin_rank":1}]}]}"#;
        let t: BatchTrace = serde_json::from_str(js).unwrap();
        t.validate().unwrap();
        assert_eq!(t.batches[0].samples[0].batch_id, 7);
        let out = serde_json::to_string(&t).unwrap();
        assert!(!out.contains("batch_id\":7,\"samples\":[{\"batch_id"));
        let back: BatchTrace = serde_json::from_str(&out).unwrap();
        assert_eq!(back, t);
    }
}
