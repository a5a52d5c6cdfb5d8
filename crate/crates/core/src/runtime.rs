//! Calibrated cost models for variable-length samples.
//!
//! Per-sample forward+backward runtime is far from linear in sequence
//! length, so ranks schedule against a measured lookup table rather than a
//! token count. The table stores (seqlen, runtime) breakpoints from offline
//! calibration runs; estimates interpolate between breakpoints and
//! extrapolate with the nearest endpoint slope. A quadratic flops proxy is
//! kept alongside for throughput accounting and as a cheaper (but cruder)
//! balancing score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest runtime an extrapolated estimate may return, so downstream
/// schedulers never divide by zero or see negative work.
pub const MIN_RUNTIME_MS: f64 = 1e-3;

/// One sample of a training batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSpec {
    pub id: u64,
    pub seqlen: u64,
    /// Rank the dataloader originally placed this sample on.
    pub origin_rank: usize,
    /// Batch this sample belongs to; balancing never crosses batches.
    pub batch_id: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum RuntimeModelError {
    #[error("no measurements provided")]
    EmptyMeasurements,
    #[error("non-positive measurement (seqlen {seqlen}, runtime {runtime_ms} ms)")]
    NonPositiveValue { seqlen: u64, runtime_ms: f64 },
    #[error("flops coefficients must be non-negative and not both zero")]
    InvalidFlopsCoeffs,
    #[error("measurement file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A calibration breakpoint: measured runtime for one sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub seqlen: u64,
    pub runtime_ms: f64,
}

/// Piecewise-linear seqlen -> runtime model built from measurements.
///
/// Breakpoints are strictly increasing in seqlen and carry positive
/// runtimes; both are enforced at construction and on deserialize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct RuntimeTable {
    breakpoints: Vec<Breakpoint>,
}

#[derive(Deserialize)]
struct RawTable {
    breakpoints: Vec<Breakpoint>,
}

impl TryFrom<RawTable> for RuntimeTable {
    type Error = RuntimeModelError;

    fn try_from(raw: RawTable) -> Result<Self, Self::Error> {
        let pairs: Vec<(u64, f64)> = raw
            .breakpoints
            .iter()
            .map(|b| (b.seqlen, b.runtime_ms))
            .collect();
        RuntimeTable::from_measurements(&pairs)
    }
}

impl RuntimeTable {
    /// Builds a table from raw (seqlen, runtime_ms) measurements.
    ///
    /// Measurements are sorted by seqlen; repeated seqlens collapse to the
    /// mean of their runtimes.
    pub fn from_measurements(measurements: &[(u64, f64)]) -> Result<Self, RuntimeModelError> {
        if measurements.is_empty() {
            return Err(RuntimeModelError::EmptyMeasurements);
        }
        for &(seqlen, runtime_ms) in measurements {
            if seqlen == 0 || runtime_ms <= 0.0 || !runtime_ms.is_finite() {
                return Err(RuntimeModelError::NonPositiveValue { seqlen, runtime_ms });
            }
        }
        let mut sorted = measurements.to_vec();
        sorted.sort_by_key(|&(seqlen, _)| seqlen);

        let mut breakpoints: Vec<Breakpoint> = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let seqlen = sorted[i].0;
            let mut sum = 0.0;
            let mut n = 0u32;
            while i < sorted.len() && sorted[i].0 == seqlen {
                sum += sorted[i].1;
                n += 1;
                i += 1;
            }
            breakpoints.push(Breakpoint {
                seqlen,
                runtime_ms: sum / n as f64,
            });
        }
        Ok(RuntimeTable { breakpoints })
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    /// Estimated runtime in ms for a sample of the given sequence length.
    ///
    /// Exact at breakpoints, linear in between; beyond either end the
    /// nearest segment's slope extends the curve, floored at
    /// [`MIN_RUNTIME_MS`]. A single-breakpoint table is flat.
    pub fn estimate_runtime(&self, seqlen: u64) -> f64 {
        self.estimate_runtime_with_min(seqlen, MIN_RUNTIME_MS)
    }

    /// As [`estimate_runtime`](Self::estimate_runtime) with an explicit
    /// extrapolation floor.
    pub fn estimate_runtime_with_min(&self, seqlen: u64, min_ms: f64) -> f64 {
        let bps = &self.breakpoints;
        let s = seqlen as f64;
        if bps.len() == 1 {
            return bps[0].runtime_ms;
        }
        let first = bps[0];
        let last = bps[bps.len() - 1];
        if seqlen <= first.seqlen {
            if seqlen == first.seqlen {
                return first.runtime_ms;
            }
            let next = bps[1];
            let slope = segment_slope(first, next);
            return (first.runtime_ms - (first.seqlen as f64 - s) * slope).max(min_ms);
        }
        if seqlen >= last.seqlen {
            if seqlen == last.seqlen {
                return last.runtime_ms;
            }
            let prev = bps[bps.len() - 2];
            let slope = segment_slope(prev, last);
            return (last.runtime_ms + (s - last.seqlen as f64) * slope).max(min_ms);
        }
        // Interior: find the segment containing seqlen.
        let hi = bps.partition_point(|b| b.seqlen < seqlen);
        let right = bps[hi];
        if right.seqlen == seqlen {
            return right.runtime_ms;
        }
        let left = bps[hi - 1];
        let t = (s - left.seqlen as f64) / (right.seqlen - left.seqlen) as f64;
        left.runtime_ms + t * (right.runtime_ms - left.runtime_ms)
    }
}

fn segment_slope(a: Breakpoint, b: Breakpoint) -> f64 {
    (b.runtime_ms - a.runtime_ms) / (b.seqlen - a.seqlen) as f64
}

/// Coefficients of the quadratic flops proxy `alpha*s + beta*s^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsCoeffs {
    pub alpha: f64,
    pub beta: f64,
}

impl FlopsCoeffs {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, RuntimeModelError> {
        let valid = |c: f64| c.is_finite() && c >= 0.0;
        if !valid(alpha) || !valid(beta) || (alpha == 0.0 && beta == 0.0) {
            return Err(RuntimeModelError::InvalidFlopsCoeffs);
        }
        Ok(FlopsCoeffs { alpha, beta })
    }

    /// Estimated flops for one sample: linear term for elementwise work,
    /// quadratic term for attention.
    pub fn estimate_flops(&self, seqlen: u64) -> f64 {
        let s = seqlen as f64;
        self.alpha * s + self.beta * s * s
    }
}

/// Parses calibration measurements from CSV with a `seqlen,runtime_ms`
/// header. Values are validated by [`RuntimeTable::from_measurements`].
pub fn parse_measurements_csv<R: std::io::Read>(
    reader: R,
) -> Result<Vec<(u64, f64)>, RuntimeModelError> {
    #[derive(Deserialize)]
    struct Row {
        seqlen: u64,
        runtime_ms: f64,
    }

    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| RuntimeModelError::Parse {
            // Line 1 is the header.
            line: i + 2,
            message: e.to_string(),
        })?;
        out.push((row.seqlen, row.runtime_ms));
    }
    Ok(out)
}
