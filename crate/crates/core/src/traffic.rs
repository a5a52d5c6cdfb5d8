//! Global-memory traffic estimates for chains of elementwise kernels.
//!
//! An unfused chain writes every intermediate to global memory and reads it
//! back in the next op. A fused chain keeps intermediates in registers, so
//! only external inputs and the final output touch global memory. The model
//! counts one read per consumed tensor and one write per produced tensor;
//! no cache effects.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("kernel chain is empty")]
    EmptyChain,
}

/// One op in a chain: bytes it reads from outside the chain and bytes it
/// produces. Op k additionally consumes op k-1's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelOp {
    pub external_input_bytes: u64,
    pub output_bytes: u64,
}

/// An ordered chain of kernels where each op feeds the next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelChain {
    ops: Vec<KernelOp>,
}

impl KernelChain {
    pub fn new(ops: Vec<KernelOp>) -> Result<Self, TrafficError> {
        if ops.is_empty() {
            return Err(TrafficError::EmptyChain);
        }
        Ok(KernelChain { ops })
    }

    pub fn ops(&self) -> &[KernelOp] {
        &self.ops
    }
}

/// Byte totals for the unfused and fused execution of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrafficEstimate {
    pub naive_bytes: u64,
    pub fused_bytes: u64,
}

impl TrafficEstimate {
    pub fn ratio(&self) -> f64 {
        self.fused_bytes as f64 / self.naive_bytes as f64
    }
}

/// Computes global-memory traffic for both executions of the chain.
pub fn fused_traffic(chain: &KernelChain) -> TrafficEstimate {
    let ops = chain.ops();
    let mut naive = 0u64;
    let mut external = 0u64;
    for (k, op) in ops.iter().enumerate() {
        let carried = if k > 0 { ops[k - 1].output_bytes } else { 0 };
        naive += op.external_input_bytes + carried + op.output_bytes;
        external += op.external_input_bytes;
    }
    TrafficEstimate {
        naive_bytes: naive,
        fused_bytes: external + ops[ops.len() - 1].output_bytes,
    }
}
