//! Planning and simulation primitives for multi-rank training steps.
//!
//! The crate covers five concerns that show up when driving long-context
//! training on a heterogeneous cluster:
//!
//! * [`runtime`]: calibrated sequence-length to runtime lookup tables and a
//!   quadratic flops proxy, used as cost models everywhere else.
//! * [`traffic`]: global-memory traffic estimates for chains of elementwise
//!   kernels, fused versus unfused.
//! * [`balance`]: greedy per-batch load balancing across ranks with explicit
//!   sample exchange plans and an exact small-batch oracle.
//! * [`ac`]: activation checkpointing with multi-level placement, deciding
//!   per activation between recomputation and GPU, CPU or disk storage
//!   under byte budgets.
//! * [`sim`] and [`fault`]: a deterministic trace-driven cluster simulator
//!   plus snapshot/restore machinery for crash-resume runs.

pub mod ac;
pub mod balance;
pub mod digest;
pub mod fault;
pub mod runtime;
pub mod sim;
pub mod traffic;
