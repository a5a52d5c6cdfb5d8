//! Simulation config schema plus shared file I/O helpers.
//!
//! Configs load from TOML or JSON by extension; file paths inside a config
//! resolve relative to the config file itself, so a config directory is
//! self-contained and relocatable.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stepsim_core::runtime::FlopsCoeffs;
use stepsim_core::sim::{BalancingMode, ClusterConfig, NoiseSpec, PlannerLatency};

use crate::errors::CliError;

/// Noise seed when neither the config nor `--seed` provides one.
pub const DEFAULT_SEED: u64 = 7;

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::file(path, &e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

/// Writes pretty JSON with a trailing newline. Serialization is
/// deterministic, so equal values produce identical bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::new("SerializeError", e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::file(path, &e))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    /// Runtime table JSON, as written by `calibrate`.
    pub table: PathBuf,
    /// Batch trace JSON.
    pub trace: PathBuf,
    pub cluster: ClusterSection,
    /// Present iff the run should snapshot and replay a failure schedule.
    pub fault: Option<FaultSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub num_ranks: usize,
    #[serde(default = "default_mode")]
    pub balancing_mode: BalancingMode,
    #[serde(default)]
    pub async_planning: bool,
    #[serde(default)]
    pub planner_latency: LatencySection,
    #[serde(default = "default_cp")]
    pub cp_size: usize,
    #[serde(default)]
    pub all2all_ms_per_token: f64,
    #[serde(default)]
    pub allreduce_ms: f64,
    pub flops_coeffs: CoeffsSection,
    pub peak_flops_per_rank: f64,
    #[serde(default)]
    pub noise: NoiseSection,
}

fn default_mode() -> BalancingMode {
    BalancingMode::Runtime
}

fn default_cp() -> usize {
    1
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySection {
    #[serde(default)]
    pub fixed_ms: f64,
    #[serde(default)]
    pub per_sample_ms: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffsSection {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub enabled: bool,
    pub seed: Option<u64>,
    #[serde(default)]
    pub amplitude: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    /// Failure schedule JSON.
    pub schedule: PathBuf,
    pub snapshot_every: u64,
    pub snapshot_cost_ms: f64,
    /// Snapshot directory; `STEPSIM_STORE_DIR` overrides, and the default
    /// is a `snapshots` directory next to the report.
    pub store_dir: Option<PathBuf>,
}

impl SimulateFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_to_string(path)?;
        let mut file: SimulateFile = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| CliError::parse(path, e))?,
            Some("json") => serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?,
            _ => {
                return Err(CliError::new(
                    "ParseError",
                    format!("{}: expected a .toml or .json config", path.display()),
                ))
            }
        };
        let base = path.parent().unwrap_or(Path::new("."));
        file.table = resolve(base, &file.table);
        file.trace = resolve(base, &file.trace);
        if let Some(fault) = &mut file.fault {
            fault.schedule = resolve(base, &fault.schedule);
            if let Some(dir) = &fault.store_dir {
                fault.store_dir = Some(resolve(base, dir));
            }
        }
        Ok(file)
    }

    pub fn cluster_config(&self, seed_override: Option<u64>) -> Result<ClusterConfig, CliError> {
        let c = &self.cluster;
        let coeffs = FlopsCoeffs::new(c.flops_coeffs.alpha, c.flops_coeffs.beta)?;
        let seed = seed_override.or(c.noise.seed).unwrap_or(DEFAULT_SEED);
        Ok(ClusterConfig {
            num_ranks: c.num_ranks,
            balancing_mode: c.balancing_mode,
            async_planning: c.async_planning,
            planner_latency: PlannerLatency {
                fixed_ms: c.planner_latency.fixed_ms,
                per_sample_ms: c.planner_latency.per_sample_ms,
            },
            cp_size: c.cp_size,
            all2all_ms_per_token: c.all2all_ms_per_token,
            allreduce_ms: c.allreduce_ms,
            flops_coeffs: coeffs,
            peak_flops_per_rank: c.peak_flops_per_rank,
            noise: NoiseSpec {
                enabled: c.noise.enabled,
                seed,
                amplitude: c.noise.amplitude,
            },
        })
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
